#include "funnelcert/sos.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace funnelcert {

namespace {

Monomial mono_mul(const Monomial& a, const Monomial& b) {
  Monomial r = a;
  for (size_t i = 0; i < r.exp.size(); ++i) r.exp[i] += b.exp[i];
  return r;
}

Monomial mono_square(const Monomial& a) {
  Monomial r = a;
  for (int& e : r.exp) e *= 2;
  return r;
}

// d - a with nonnegative entries, or nullopt semantics via bool.
bool mono_div(const Monomial& d, const Monomial& a, Monomial& out) {
  out = d;
  for (size_t i = 0; i < d.exp.size(); ++i) {
    out.exp[i] -= a.exp[i];
    if (out.exp[i] < 0) return false;
  }
  return true;
}

}  // namespace

LinExpr LinExpr::var(int index, double scale) {
  LinExpr e;
  if (index < 0) throw std::invalid_argument("LinExpr::var: negative index");
  e.coeffs[index] = scale;
  return e;
}

bool LinExpr::is_zero() const {
  return coeffs.empty() && std::fabs(constant) <= kCoeffTol;
}

double LinExpr::eval(const Eigen::VectorXd& v) const {
  double r = constant;
  for (const auto& [i, c] : coeffs) {
    if (i >= v.size()) throw std::invalid_argument("LinExpr::eval: decision vector too short");
    r += c * v[i];
  }
  return r;
}

LinExpr& LinExpr::operator+=(const LinExpr& rhs) {
  constant += rhs.constant;
  for (const auto& [i, c] : rhs.coeffs) {
    double& slot = coeffs[i];
    slot += c;
    if (std::fabs(slot) <= kCoeffTol) coeffs.erase(i);
  }
  return *this;
}

LinExpr& LinExpr::operator-=(const LinExpr& rhs) { return *this += -rhs; }

LinExpr& LinExpr::operator*=(double c) {
  constant *= c;
  for (auto it = coeffs.begin(); it != coeffs.end();) {
    it->second *= c;
    if (std::fabs(it->second) <= kCoeffTol)
      it = coeffs.erase(it);
    else
      ++it;
  }
  return *this;
}

LinExpr LinExpr::operator-() const {
  LinExpr e = *this;
  e.constant = -e.constant;
  for (auto& [i, c] : e.coeffs) c = -c;
  return e;
}

DecisionPoly::DecisionPoly(const Polynomial& p) : vars_(p.vars()) {
  for (const auto& [m, c] : p.terms()) terms_.emplace(m, LinExpr(c));
}

int DecisionPoly::total_degree() const {
  int d = 0;
  for (const auto& [m, e] : terms_) d = std::max(d, m.degree());
  return d;
}

int DecisionPoly::degree_in(int v) const {
  int d = 0;
  for (const auto& [m, e] : terms_) d = std::max(d, m.degree_in(v));
  return d;
}

void DecisionPoly::add_term(const Monomial& m, const LinExpr& e) {
  if (static_cast<int>(m.exp.size()) != vars_.size())
    throw std::invalid_argument("add_term: exponent count does not match variable set");
  for (int x : m.exp)
    if (x < 0) throw std::invalid_argument("add_term: negative exponent");
  LinExpr& slot = terms_[m];
  slot += e;
  if (slot.is_zero()) terms_.erase(m);
}

Polynomial DecisionPoly::at(const Eigen::VectorXd& v) const {
  Polynomial p(vars_);
  for (const auto& [m, e] : terms_) p.add_term(m, e.eval(v));
  return p;
}

DecisionPoly& DecisionPoly::operator+=(const DecisionPoly& rhs) {
  if (!(vars_ == rhs.vars_))
    throw std::invalid_argument("polynomial arithmetic on mismatched variable sets");
  for (const auto& [m, e] : rhs.terms_) add_term(m, e);
  return *this;
}

DecisionPoly& DecisionPoly::operator-=(const DecisionPoly& rhs) {
  if (!(vars_ == rhs.vars_))
    throw std::invalid_argument("polynomial arithmetic on mismatched variable sets");
  for (const auto& [m, e] : rhs.terms_) add_term(m, -e);
  return *this;
}

DecisionPoly& DecisionPoly::operator*=(double c) {
  for (auto& [m, e] : terms_) e *= c;
  prune();
  return *this;
}

DecisionPoly operator*(const Polynomial& p, const DecisionPoly& d) {
  if (!(p.vars() == d.vars()))
    throw std::invalid_argument("polynomial arithmetic on mismatched variable sets");
  DecisionPoly out(d.vars());
  for (const auto& [mp, cp] : p.terms())
    for (const auto& [md, ed] : d.terms()) out.add_term(mono_mul(mp, md), ed * cp);
  return out;
}

DecisionPoly DecisionPoly::operator-() const {
  DecisionPoly out(vars_);
  for (const auto& [m, e] : terms_) out.terms_.emplace(m, -e);
  return out;
}

void DecisionPoly::prune() {
  for (auto it = terms_.begin(); it != terms_.end();)
    it = it->second.is_zero() ? terms_.erase(it) : std::next(it);
}

std::vector<Monomial> monomial_basis_list(const VarSet& vars, int total_cap, int time_cap,
                                          int state_cap) {
  if (total_cap < 0) throw std::invalid_argument("monomial_basis_list: negative total degree");
  std::vector<Monomial> out;
  int tmax = vars.has_time ? total_cap : 0;
  if (vars.has_time && time_cap >= 0) tmax = std::min(tmax, time_cap);
  for (int a = 0; a <= tmax; ++a) {
    int sbudget = total_cap - a;
    if (state_cap >= 0) sbudget = std::min(sbudget, state_cap);
    // Distribute sbudget over the state slots.
    Monomial m(vars.size());
    if (vars.has_time) m.exp[vars.time_index()] = a;
    std::vector<Monomial> level{m};
    for (int k = 0; k < vars.n_states; ++k) {
      std::vector<Monomial> next;
      for (const Monomial& base : level) {
        int used = base.degree() - a;
        for (int e = 0; e + used <= sbudget; ++e) {
          Monomial grown = base;
          grown.exp[vars.state_index(k)] = e;
          next.push_back(grown);
        }
      }
      level = std::move(next);
    }
    out.insert(out.end(), level.begin(), level.end());
  }
  std::sort(out.begin(), out.end(), monomial_less);
  return out;
}

DecisionPoly decision_poly(SosProgram& prog, const VarSet& vars,
                           const std::vector<Monomial>& monomials) {
  DecisionPoly d(vars);
  for (const Monomial& m : monomials) d.add_term(m, LinExpr::var(prog.add_decision()));
  return d;
}

std::vector<Monomial> gram_basis(const DecisionPoly& constraint) {
  if (constraint.is_zero()) return {};
  const int deg = constraint.total_degree();
  if (deg % 2 != 0) throw std::invalid_argument("gram_basis: constraint has odd total degree");
  const int nv = constraint.vars().size();
  const int half = deg / 2;

  // Per-variable degree box of the support, halved (rounded up).
  std::vector<int> cap(nv, 0);
  for (const auto& [m, e] : constraint.terms())
    for (int v = 0; v < nv; ++v) cap[v] = std::max(cap[v], m.exp[v]);
  for (int v = 0; v < nv; ++v) cap[v] = (cap[v] + 1) / 2;

  // Universe: total degree <= deg/2 inside the box.
  std::vector<Monomial> universe;
  Monomial work(nv);
  auto enumerate = [&](auto&& self, int v, int used) -> void {
    if (v == nv) {
      universe.push_back(work);
      return;
    }
    for (int e = 0; e <= std::min(cap[v], half - used); ++e) {
      work.exp[v] = e;
      self(self, v + 1, used + e);
    }
    work.exp[v] = 0;
  };
  enumerate(enumerate, 0, 0);

  std::set<Monomial, MonomialLess> support;
  for (const auto& [m, e] : constraint.terms()) support.insert(m);

  // Diagonal-consistency pruning to a fixpoint: if 2m is not in the support
  // and no two distinct basis monomials sum to 2m, the coefficient equation
  // for 2m reads G_mm = 0, and PSD-ness zeroes the whole row, so m can go.
  std::set<Monomial, MonomialLess> basis(universe.begin(), universe.end());
  bool removed = true;
  while (removed) {
    removed = false;
    for (auto it = basis.begin(); it != basis.end();) {
      Monomial twice = mono_square(*it);
      bool keep = support.count(twice) > 0;
      if (!keep) {
        Monomial other;
        for (const Monomial& m1 : basis) {
          if (mono_div(twice, m1, other) && !(other == m1) && basis.count(other)) {
            keep = true;
            break;
          }
        }
      }
      if (keep) {
        ++it;
      } else {
        it = basis.erase(it);
        removed = true;
      }
    }
  }
  return {basis.begin(), basis.end()};
}

SosCompilation compile(const SosProgram& prog) {
  SosCompilation out;
  out.sdp.n_free = prog.n_decision;

  auto check_index = [&](int i) {
    if (i < 0 || i >= prog.n_decision)
      throw std::invalid_argument("compile: decision index out of range");
  };

  if (!prog.objective.coeffs.empty()) {
    out.sdp.objective_free.assign(prog.n_decision, 0.0);
    const double sgn = prog.sense == Sense::kMaximize ? -1.0 : 1.0;
    for (const auto& [i, c] : prog.objective.coeffs) {
      check_index(i);
      out.sdp.objective_free[i] = sgn * c;
    }
  }

  for (const DecisionPoly& con : prog.sos_constraints) {
    std::vector<Monomial> basis = gram_basis(con);
    out.bases.push_back(basis);
    if (basis.empty()) {
      out.gram_blocks.push_back(-1);
      continue;
    }
    const int blk = static_cast<int>(out.sdp.block_dims.size());
    out.gram_blocks.push_back(blk);
    out.sdp.block_dims.push_back(static_cast<int>(basis.size()));

    // Coefficient matching: every representable monomial plus the support.
    std::map<Monomial, std::vector<std::pair<int, int>>, MonomialLess> rows;
    for (size_t i = 0; i < basis.size(); ++i)
      for (size_t k = i; k < basis.size(); ++k)
        rows[mono_mul(basis[i], basis[k])].push_back({static_cast<int>(i), static_cast<int>(k)});
    for (const auto& [m, e] : con.terms()) rows[m];

    for (const auto& [m, pairs] : rows) {
      SdpConstraint row;
      for (auto [i, k] : pairs) row.entries.push_back({blk, i, k, 1.0});
      auto it = con.terms().find(m);
      if (it != con.terms().end()) {
        row.rhs = it->second.constant;
        for (const auto& [l, c] : it->second.coeffs) {
          check_index(l);
          row.free_terms.push_back({l, -c});
        }
      }
      out.sdp.constraints.push_back(std::move(row));
    }
  }

  for (const LinearConstraint& lc : prog.linear_constraints) {
    SdpConstraint row;
    for (const auto& [l, c] : lc.expr.coeffs) {
      check_index(l);
      row.free_terms.push_back({l, c});
    }
    row.rhs = -lc.expr.constant;
    if (!lc.equality) {
      const int blk = static_cast<int>(out.sdp.block_dims.size());
      out.sdp.block_dims.push_back(1);
      row.entries.push_back({blk, 0, 0, -1.0});
    }
    out.sdp.constraints.push_back(std::move(row));
  }

  out.sdp.validate();
  return out;
}

const char* to_string(SosStatus s) {
  switch (s) {
    case SosStatus::kOptimal: return "optimal";
    case SosStatus::kInfeasible: return "infeasible";
    case SosStatus::kUnbounded: return "unbounded";
    case SosStatus::kMaxIterations: return "max-iter";
    case SosStatus::kNumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

SosSolution solve_sos(const SosProgram& prog, const SolverOptions& opts) {
  SosCompilation comp = compile(prog);
  SosSolution sol;
  sol.bases = comp.bases;
  sol.sdp = solve_sdp(comp.sdp, opts);
  switch (sol.sdp.status) {
    case SdpStatus::kOptimal: {
      sol.status = SosStatus::kOptimal;
      sol.decision = sol.sdp.free_vars;
      sol.objective = prog.objective.eval(sol.decision);
      for (int blk : comp.gram_blocks)
        sol.grams.push_back(blk >= 0 ? sol.sdp.X[blk] : Eigen::MatrixXd());
      break;
    }
    case SdpStatus::kPrimalInfeasible: sol.status = SosStatus::kInfeasible; break;
    case SdpStatus::kDualInfeasible: sol.status = SosStatus::kUnbounded; break;
    case SdpStatus::kMaxIterations: sol.status = SosStatus::kMaxIterations; break;
    case SdpStatus::kNumericalFailure: sol.status = SosStatus::kNumericalFailure; break;
  }
  return sol;
}

Polynomial gram_poly(const VarSet& vars, const std::vector<Monomial>& basis,
                     const Eigen::MatrixXd& G) {
  const int n = static_cast<int>(basis.size());
  if (G.rows() != n || G.cols() != n)
    throw std::invalid_argument("gram_poly: matrix size does not match basis");
  Polynomial p(vars);
  for (int i = 0; i < n; ++i) {
    p.add_term(mono_square(basis[i]), G(i, i));
    for (int k = i + 1; k < n; ++k) p.add_term(mono_mul(basis[i], basis[k]), 2.0 * G(i, k));
  }
  return p;
}

std::vector<Polynomial> sos_decomposition(const VarSet& vars,
                                          const std::vector<Monomial>& basis,
                                          const Eigen::MatrixXd& G) {
  const int n = static_cast<int>(basis.size());
  if (G.rows() != n || G.cols() != n)
    throw std::invalid_argument("sos_decomposition: matrix size does not match basis");
  std::vector<Polynomial> gs;
  if (n == 0) return gs;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (G + G.transpose()));
  // Clip at the PSD tolerance floor: solver Grams sit a hair off the optimal
  // face, so rank detection below this level would produce spurious squares.
  const double floor = 1e-8 * std::max(1.0, std::fabs(es.eigenvalues().maxCoeff()));
  for (int i = n - 1; i >= 0; --i) {  // descending eigenvalue order
    const double lam = es.eigenvalues()[i];
    if (lam <= floor) continue;
    Polynomial g(vars);
    for (int j = 0; j < n; ++j) g.add_term(basis[j], std::sqrt(lam) * es.eigenvectors()(j, i));
    gs.push_back(std::move(g));
  }
  return gs;
}

SosCheck check_sos(const Polynomial& p, const SolverOptions& opts) {
  SosCheck chk;
  if (p.is_zero()) {
    chk.is_sos = true;
    chk.gram.resize(0, 0);
    chk.coeff_residual = 0.0;
    chk.min_eigenvalue = 0.0;
    return chk;
  }
  SosProgram prog;
  prog.sos_constraints.push_back(DecisionPoly(p));
  SosCompilation comp = compile(prog);
  const int blk = comp.gram_blocks[0];
  for (int i = 0; i < comp.sdp.block_dims[blk]; ++i)
    comp.sdp.objective_entries.push_back({blk, i, i, 1.0});
  // Membership only needs primal feasibility; a loose gap tolerance keeps the
  // solver from chasing trace optimality on boundary-of-cone instances (whose
  // Gram spectrahedra have empty interior and defeat strict convergence).
  SolverOptions relaxed = opts;
  relaxed.gap_tol = std::max(relaxed.gap_tol, 1e-4);
  chk.sdp = solve_sdp(comp.sdp, relaxed);
  if (chk.sdp.status == SdpStatus::kPrimalInfeasible) return chk;
  if (chk.sdp.status == SdpStatus::kDualInfeasible)
    throw std::runtime_error("check_sos: unexpected dual-infeasible status");

  // A stalled run still carries its best iterate; the witness gates below are
  // the actual soundness contract, so validate whatever Gram came back.
  chk.basis = comp.bases[0];
  chk.gram = 0.5 * (chk.sdp.X[blk] + chk.sdp.X[blk].transpose());
  Polynomial diff = gram_poly(p.vars(), chk.basis, chk.gram) - p;
  chk.coeff_residual = diff.max_abs_coeff();
  if (chk.gram.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(chk.gram, Eigen::EigenvaluesOnly);
    chk.min_eigenvalue = es.eigenvalues().minCoeff();
  } else {
    chk.min_eigenvalue = 0.0;
  }
  const bool ok =
      chk.coeff_residual <= 1e-7 * (1.0 + p.max_abs_coeff()) &&
      chk.min_eigenvalue >= -1e-8 * std::max(1.0, chk.gram.trace());
  if (!ok) {
    if (chk.sdp.status != SdpStatus::kOptimal)
      throw std::runtime_error(std::string("check_sos: solver failed with status ") +
                               to_string(chk.sdp.status));
    throw std::runtime_error("check_sos: witness failed validation (residual " +
                             std::to_string(chk.coeff_residual) + ", min eigenvalue " +
                             std::to_string(chk.min_eigenvalue) + ")");
  }
  chk.is_sos = true;
  return chk;
}

}  // namespace funnelcert
