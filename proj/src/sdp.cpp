#include "funnelcert/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace funnelcert {

void SdpProblem::validate() const {
  const int nb = static_cast<int>(block_dims.size());
  for (int d : block_dims)
    if (d <= 0) throw std::invalid_argument("SdpProblem: block dimensions must be positive");
  auto check_entry = [&](const SdpEntry& e) {
    if (e.block < 0 || e.block >= nb) throw std::invalid_argument("SdpProblem: entry block out of range");
    if (e.row < 0 || e.col < 0 || e.row >= block_dims[e.block] || e.col >= block_dims[e.block])
      throw std::invalid_argument("SdpProblem: entry index out of range");
    if (e.row > e.col) throw std::invalid_argument("SdpProblem: entries must have row <= col");
  };
  for (const auto& e : objective_entries) check_entry(e);
  if (!objective_free.empty() && static_cast<int>(objective_free.size()) != n_free)
    throw std::invalid_argument("SdpProblem: objective_free size mismatch");
  for (const auto& con : constraints) {
    for (const auto& e : con.entries) check_entry(e);
    for (const auto& [j, v] : con.free_terms) {
      (void)v;
      if (j < 0 || j >= n_free) throw std::invalid_argument("SdpProblem: free index out of range");
    }
  }
}

const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::kOptimal: return "optimal";
    case SdpStatus::kPrimalInfeasible: return "primal-infeasible";
    case SdpStatus::kDualInfeasible: return "dual-infeasible";
    case SdpStatus::kMaxIterations: return "max-iter";
    case SdpStatus::kNumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

namespace {

// <A, X> with the entry convention (off-diagonal values count twice).
double inner_entries(const std::vector<SdpEntry>& es, const std::vector<Eigen::MatrixXd>& X) {
  double acc = 0.0;
  for (const auto& e : es)
    acc += (e.row == e.col) ? e.value * X[e.block](e.row, e.col)
                            : 2.0 * e.value * X[e.block](e.row, e.col);
  return acc;
}

// Same, for entries known to live in a single block evaluated against S.
double inner_block(const std::vector<SdpEntry>& es, const Eigen::MatrixXd& S) {
  double acc = 0.0;
  for (const auto& e : es)
    acc += (e.row == e.col) ? e.value * S(e.row, e.col) : 2.0 * e.value * S(e.row, e.col);
  return acc;
}

// target += w * A for entries of one block.
void add_scaled(const std::vector<SdpEntry>& es, double w, Eigen::MatrixXd& target) {
  for (const auto& e : es) {
    target(e.row, e.col) += w * e.value;
    if (e.row != e.col) target(e.col, e.row) += w * e.value;
  }
}

std::vector<Eigen::MatrixXd> zero_blocks(const std::vector<int>& dims) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(dims.size());
  for (int d : dims) out.push_back(Eigen::MatrixXd::Zero(d, d));
  return out;
}

}  // namespace

KktResiduals residuals(const SdpProblem& prob, const std::vector<Eigen::MatrixXd>& X,
                       const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                       const std::vector<Eigen::MatrixXd>& Z) {
  const int m = prob.n_constraints();
  if (static_cast<int>(X.size()) != static_cast<int>(prob.block_dims.size()) ||
      X.size() != Z.size() || y.size() != m ||
      u.size() != prob.n_free)
    throw std::invalid_argument("residuals: shape mismatch");
  for (size_t b = 0; b < X.size(); ++b)
    if (X[b].rows() != prob.block_dims[b] || Z[b].rows() != prob.block_dims[b])
      throw std::invalid_argument("residuals: block shape mismatch");

  KktResiduals r;
  // Primal equality residual.
  double pnum = 0.0, bnorm = 0.0;
  for (int k = 0; k < m; ++k) {
    const auto& con = prob.constraints[k];
    double lhs = inner_entries(con.entries, X);
    for (const auto& [j, v] : con.free_terms) lhs += v * u[j];
    pnum += (lhs - con.rhs) * (lhs - con.rhs);
    bnorm += con.rhs * con.rhs;
  }
  r.primal = std::sqrt(pnum) / (1.0 + std::sqrt(bnorm));

  // Dual residual: adjoint(y) + Z - C on blocks and F'y - f on free columns.
  std::vector<Eigen::MatrixXd> Rd = zero_blocks(prob.block_dims);
  for (size_t b = 0; b < Rd.size(); ++b) Rd[b] += Z[b];
  for (const auto& e : prob.objective_entries) {
    Rd[e.block](e.row, e.col) -= e.value;
    if (e.row != e.col) Rd[e.block](e.col, e.row) -= e.value;
  }
  Eigen::VectorXd rf = Eigen::VectorXd::Zero(prob.n_free);
  for (int j = 0; j < prob.n_free && !prob.objective_free.empty(); ++j)
    rf[j] -= prob.objective_free[j];
  for (int k = 0; k < m; ++k) {
    const auto& con = prob.constraints[k];
    for (const auto& e : con.entries) {
      Rd[e.block](e.row, e.col) += y[k] * e.value;
      if (e.row != e.col) Rd[e.block](e.col, e.row) += y[k] * e.value;
    }
    for (const auto& [j, v] : con.free_terms) rf[j] += v * y[k];
  }
  double dnum = rf.squaredNorm(), cnorm = 0.0;
  for (const auto& blk : Rd) dnum += blk.squaredNorm();
  for (const auto& e : prob.objective_entries)
    cnorm += (e.row == e.col ? 1.0 : 2.0) * e.value * e.value;
  for (double v : prob.objective_free) cnorm += v * v;
  r.dual = std::sqrt(dnum) / (1.0 + std::sqrt(cnorm));

  // Relative duality gap.
  double pobj = 0.0;
  for (const auto& e : prob.objective_entries)
    pobj += (e.row == e.col ? 1.0 : 2.0) * e.value * X[e.block](e.row, e.col);
  for (int j = 0; j < prob.n_free && !prob.objective_free.empty(); ++j)
    pobj += prob.objective_free[j] * u[j];
  double dobj = 0.0;
  for (int k = 0; k < m; ++k) dobj += prob.constraints[k].rhs * y[k];
  r.gap = std::fabs(pobj - dobj) / (1.0 + std::fabs(pobj) + std::fabs(dobj));
  return r;
}

KktResiduals residuals(const SdpProblem& prob, const SdpSolution& sol) {
  return residuals(prob, sol.X, sol.free_vars, sol.y, sol.Z);
}

// ---------------------------------------------------------------------------
// Interior-point core
// ---------------------------------------------------------------------------

namespace {

struct NtScaling {
  Eigen::MatrixXd D, Dinv, W;
  Eigen::VectorXd sigma;  // scaled point (diagonal)
};

// Half-step factors of the symmetrized product linearization: solves
// sym(diag(sigma) U) = Mat for U entrywise.
Eigen::MatrixXd lyap_inverse(const Eigen::VectorXd& sigma, const Eigen::MatrixXd& M) {
  Eigen::MatrixXd out(M.rows(), M.cols());
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) out(i, j) = 2.0 * M(i, j) / (sigma[i] + sigma[j]);
  return out;
}

class Ipm {
 public:
  Ipm(const SdpProblem& prob, const SolverOptions& opts) : orig_(prob), opts_(opts) {
    build_scaled();
    build_components();
  }

  SdpSolution run();

 private:
  struct Touch {
    int row;                     // global constraint index
    std::vector<SdpEntry> es;    // entries of that constraint in this block (scaled)
  };
  struct Direction {
    std::vector<Eigen::MatrixXd> dX, dZ;
    Eigen::VectorXd dy, du;
    double dtau = 0.0, dkappa = 0.0;
  };

  void build_scaled();
  void build_components();
  bool factor_iteration();                       // NT scalings + Schur factorization
  Direction newton(double eta, const std::vector<Eigen::MatrixXd>& Rc, double rtk);
  void solve_saddle(const Eigen::VectorXd& p_rows, const Eigen::VectorXd& q,
                    Eigen::VectorXd& dy, Eigen::VectorXd& du) const;
  void apply_kkt(const Eigen::VectorXd& dy, const Eigen::VectorXd& du,
                 Eigen::VectorXd& out_rows, Eigen::VectorXd& out_free) const;
  double max_cone_step(const std::vector<Eigen::MatrixXd>& Mats,
                       const std::vector<Eigen::MatrixXd>& dMats) const;
  SdpSolution finish(SdpStatus status);
  bool extract_optimal(SdpSolution& sol) const;
  bool extract_primal_infeasible(SdpSolution& sol) const;
  bool extract_dual_infeasible(SdpSolution& sol) const;

  const SdpProblem& orig_;
  SolverOptions opts_;

  // Scaled data.
  int nb_ = 0, m_ = 0, p_ = 0;
  std::vector<int> dims_;
  Eigen::VectorXd b_, f_;
  std::vector<Eigen::MatrixXd> C_;
  std::vector<std::vector<SdpEntry>> row_entries_;                  // per constraint
  std::vector<std::vector<std::pair<int, double>>> row_free_;      // per constraint
  std::vector<std::vector<Touch>> touches_;                        // per block
  // Scale factors (scaled = factor * original).
  Eigen::VectorXd drow_;
  std::vector<double> sblk_;
  Eigen::VectorXd gcol_;
  double sobj_ = 1.0, srhs_ = 1.0;

  // Component structure.
  int ncomp_ = 0;
  std::vector<int> blk_comp_;                  // block -> component
  std::vector<int> row_comp_;                  // constraint -> component (-1: no PSD entries)
  std::vector<int> row_local_;                 // constraint -> local row inside component
  std::vector<std::vector<int>> comp_rows_;    // component -> global rows
  std::vector<std::vector<int>> comp_cols_;    // component -> free columns touched
  std::vector<int> pure_rows_;                 // constraints with no PSD entries
  std::vector<int> pure_local_;                // constraint -> index in pure_rows_

  // Iterate.
  std::vector<Eigen::MatrixXd> X_, Z_;
  Eigen::VectorXd y_, u_;
  double tau_ = 1.0, kappa_ = 1.0;

  // Per-iteration workspace.
  std::vector<NtScaling> nt_;
  std::vector<Eigen::MatrixXd> Rd_;            // dual residual matrices
  Eigen::VectorXd P_, rf_;                     // primal / free-dual residuals
  double Gs_ = 0.0;                            // gap residual
  std::vector<Eigen::MatrixXd> WCW_;
  Eigen::VectorXd bmA_;                        // b - A(WCW)
  double cWc_ = 0.0;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> comp_llt_;
  std::vector<Eigen::MatrixXd> comp_M_;        // kept for refinement
  std::vector<Eigen::MatrixXd> comp_Y_;        // M^{-1} F1 on the touched columns
  Eigen::FullPivLU<Eigen::MatrixXd> saddle_lu_;
  Eigen::PartialPivLU<Eigen::MatrixXd> saddle_plu_;  // large saddle systems
  bool saddle_big_ = false;
  Eigen::VectorXd h_y_, h_u_;                  // second-RHS solve, reused
  std::string trace_;
  int iters_ = 0;

  // Best unscaled candidate seen so far, reported on non-optimal exits.
  SdpSolution best_;
  double best_metric_ = std::numeric_limits<double>::infinity();
  int best_iter_ = -1;
};

void Ipm::build_scaled() {
  nb_ = static_cast<int>(orig_.block_dims.size());
  m_ = orig_.n_constraints();
  p_ = orig_.n_free;
  dims_ = orig_.block_dims;

  drow_ = Eigen::VectorXd::Ones(m_);
  sblk_.assign(nb_, 1.0);
  gcol_ = Eigen::VectorXd::Ones(p_);

  // Ruiz equilibration of the constraint matrix [A | F]: row scaling is per
  // constraint, column scaling is uniform per block (preserving positive
  // semidefiniteness) and per free column.
  for (int pass = 0; pass < 4; ++pass) {
    for (int k = 0; k < m_; ++k) {
      double mx = 0.0;
      for (const auto& e : orig_.constraints[k].entries)
        mx = std::max(mx, std::fabs(e.value) * drow_[k] * sblk_[e.block]);
      for (const auto& [j, v] : orig_.constraints[k].free_terms)
        mx = std::max(mx, std::fabs(v) * drow_[k] * gcol_[j]);
      if (mx > 0.0) drow_[k] /= std::sqrt(mx);
    }
    std::vector<double> bmax(nb_, 0.0);
    Eigen::VectorXd gmax = Eigen::VectorXd::Zero(p_);
    for (int k = 0; k < m_; ++k) {
      for (const auto& e : orig_.constraints[k].entries)
        bmax[e.block] = std::max(bmax[e.block], std::fabs(e.value) * drow_[k] * sblk_[e.block]);
      for (const auto& [j, v] : orig_.constraints[k].free_terms)
        gmax[j] = std::max(gmax[j], std::fabs(v) * drow_[k] * gcol_[j]);
    }
    for (int b = 0; b < nb_; ++b)
      if (bmax[b] > 0.0) sblk_[b] /= std::sqrt(bmax[b]);
    for (int j = 0; j < p_; ++j)
      if (gmax[j] > 0.0) gcol_[j] /= std::sqrt(gmax[j]);
  }

  // Scaled right-hand side and objective, then norm normalization.
  b_.resize(m_);
  for (int k = 0; k < m_; ++k) b_[k] = orig_.constraints[k].rhs * drow_[k];
  srhs_ = 1.0 / std::max(1.0, m_ > 0 ? b_.cwiseAbs().maxCoeff() : 0.0);
  b_ *= srhs_;

  double cmax = 0.0;
  for (const auto& e : orig_.objective_entries)
    cmax = std::max(cmax, std::fabs(e.value) * sblk_[e.block]);
  for (int j = 0; j < p_ && !orig_.objective_free.empty(); ++j)
    cmax = std::max(cmax, std::fabs(orig_.objective_free[j]) * gcol_[j]);
  sobj_ = 1.0 / std::max(1.0, cmax);

  C_ = zero_blocks(dims_);
  for (const auto& e : orig_.objective_entries) {
    double v = e.value * sblk_[e.block] * sobj_;
    C_[e.block](e.row, e.col) += v;
    if (e.row != e.col) C_[e.block](e.col, e.row) += v;
  }
  f_ = Eigen::VectorXd::Zero(p_);
  for (int j = 0; j < p_ && !orig_.objective_free.empty(); ++j)
    f_[j] = orig_.objective_free[j] * gcol_[j] * sobj_;

  row_entries_.resize(m_);
  row_free_.resize(m_);
  touches_.assign(nb_, {});
  for (int k = 0; k < m_; ++k) {
    std::vector<SdpEntry> scaled;
    scaled.reserve(orig_.constraints[k].entries.size());
    for (const auto& e : orig_.constraints[k].entries) {
      SdpEntry s = e;
      s.value *= drow_[k] * sblk_[e.block];
      scaled.push_back(s);
    }
    // Group by block for the Schur assembly.
    std::stable_sort(scaled.begin(), scaled.end(),
                     [](const SdpEntry& a, const SdpEntry& b) { return a.block < b.block; });
    row_entries_[k] = scaled;
    for (size_t i = 0; i < scaled.size();) {
      size_t j = i;
      while (j < scaled.size() && scaled[j].block == scaled[i].block) ++j;
      Touch t;
      t.row = k;
      t.es.assign(scaled.begin() + i, scaled.begin() + j);
      touches_[scaled[i].block].push_back(std::move(t));
      i = j;
    }
    for (const auto& [j, v] : orig_.constraints[k].free_terms)
      row_free_[k].emplace_back(j, v * drow_[k] * gcol_[j]);
  }
}

void Ipm::build_components() {
  // Union-find over blocks; constraints touching several blocks merge them.
  std::vector<int> parent(nb_);
  for (int b = 0; b < nb_; ++b) parent[b] = b;
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int k = 0; k < m_; ++k) {
    int first = -1;
    for (const auto& e : row_entries_[k]) {
      if (first < 0)
        first = find(e.block);
      else
        parent[find(e.block)] = first = find(first);
    }
  }
  std::vector<int> comp_of_root(nb_, -1);
  blk_comp_.assign(nb_, -1);
  ncomp_ = 0;
  for (int b = 0; b < nb_; ++b) {
    int r = find(b);
    if (comp_of_root[r] < 0) comp_of_root[r] = ncomp_++;
    blk_comp_[b] = comp_of_root[r];
  }
  comp_rows_.assign(ncomp_, {});
  row_comp_.assign(m_, -1);
  row_local_.assign(m_, -1);
  pure_local_.assign(m_, -1);
  for (int k = 0; k < m_; ++k) {
    if (row_entries_[k].empty()) {
      pure_local_[k] = static_cast<int>(pure_rows_.size());
      pure_rows_.push_back(k);
      continue;
    }
    int c = blk_comp_[row_entries_[k].front().block];
    row_comp_[k] = c;
    row_local_[k] = static_cast<int>(comp_rows_[c].size());
    comp_rows_[c].push_back(k);
  }

  // Free columns each component actually touches: components talk to each
  // other only through the free variables, and restricting the F1 solves to
  // the touched columns keeps the factorization cost proportional to the
  // coupling rather than to the total free count.
  comp_cols_.assign(ncomp_, {});
  if (p_ > 0) {
    std::vector<char> seen(p_, 0);
    for (int c = 0; c < ncomp_; ++c) {
      for (int k : comp_rows_[c])
        for (const auto& [j, v] : row_free_[k])
          if (!seen[j]) {
            seen[j] = 1;
            comp_cols_[c].push_back(j);
          }
      std::sort(comp_cols_[c].begin(), comp_cols_[c].end());
      for (int j : comp_cols_[c]) seen[j] = 0;
    }
  }
}

bool Ipm::factor_iteration() {
  // Nesterov-Todd scaling per block.
  nt_.assign(nb_, {});
  for (int b = 0; b < nb_; ++b) {
    Eigen::LLT<Eigen::MatrixXd> lx(X_[b]), lz(Z_[b]);
    if (lx.info() != Eigen::Success || lz.info() != Eigen::Success) return false;
    Eigen::MatrixXd Lx = lx.matrixL(), Lz = lz.matrixL();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Lz.transpose() * Lx,
                                          Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::VectorXd sig = svd.singularValues();
    if (sig.minCoeff() <= 0.0) return false;
    Eigen::VectorXd si = sig.cwiseSqrt().cwiseInverse();
    NtScaling s;
    s.D = Lx * svd.matrixV() * si.asDiagonal();
    s.Dinv = si.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
    s.W = s.D * s.D.transpose();
    s.sigma = sig;
    nt_[b] = std::move(s);
  }

  // Objective-related caches.
  WCW_.assign(nb_, {});
  cWc_ = 0.0;
  for (int b = 0; b < nb_; ++b) {
    WCW_[b] = nt_[b].W * C_[b] * nt_[b].W;
    cWc_ += (C_[b].cwiseProduct(WCW_[b])).sum();
  }
  bmA_ = b_;
  for (int k = 0; k < m_; ++k)
    for (const auto& e : row_entries_[k]) {
      const Eigen::MatrixXd& S = WCW_[e.block];
      bmA_[k] -= (e.row == e.col ? e.value * S(e.row, e.col) : 2.0 * e.value * S(e.row, e.col));
    }

  // Schur complement per component: M_kl = <A_k, W A_l W>.
  comp_M_.assign(ncomp_, {});
  for (int c = 0; c < ncomp_; ++c) {
    int nc = static_cast<int>(comp_rows_[c].size());
    comp_M_[c] = Eigen::MatrixXd::Zero(nc, nc);
  }
  for (int b = 0; b < nb_; ++b) {
    const auto& ts = touches_[b];
    if (ts.empty()) continue;
    Eigen::MatrixXd& M = comp_M_[blk_comp_[b]];
    const Eigen::MatrixXd& W = nt_[b].W;
    Eigen::MatrixXd U(dims_[b], dims_[b]);
    for (size_t li = 0; li < ts.size(); ++li) {
      U.setZero();
      for (const auto& e : ts[li].es) {
        if (e.row == e.col)
          U.noalias() += e.value * W.col(e.row) * W.col(e.row).transpose();
        else {
          U.noalias() += e.value * W.col(e.row) * W.col(e.col).transpose();
          U.noalias() += e.value * W.col(e.col) * W.col(e.row).transpose();
        }
      }
      int l = row_local_[ts[li].row];
      for (size_t ki = li; ki < ts.size(); ++ki) {
        double v = inner_block(ts[ki].es, U);
        int k = row_local_[ts[ki].row];
        M(k, l) += v;
        if (ki != li) M(l, k) += v;
      }
    }
  }

  // Factor each component.  A baseline proximal regularization keeps the
  // factor bounded when constraint rows are (numerically) dependent; the
  // refinement pass in solve_saddle works against the unregularized operator
  // and recovers the accuracy on consistent systems.
  comp_llt_.assign(ncomp_, {});
  for (int c = 0; c < ncomp_; ++c) {
    if (comp_M_[c].rows() == 0) continue;
    double scale = std::max(1.0, comp_M_[c].diagonal().cwiseAbs().maxCoeff());
    double jitter = 1e-12 * scale;
    bool ok = false;
    for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
      Eigen::MatrixXd Mj = comp_M_[c];
      Mj.diagonal().array() += jitter;
      comp_llt_[c].compute(Mj);
      ok = comp_llt_[c].info() == Eigen::Success;
      jitter *= 1e3;
    }
    if (!ok) return false;
  }

  // M^{-1} F1 per component (touched columns only) and the free-variable
  // saddle system.
  comp_Y_.assign(ncomp_, {});
  const int m2 = static_cast<int>(pure_rows_.size());
  if (p_ > 0 || m2 > 0) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p_, p_);
    std::vector<int> pos(p_, -1);
    for (int c = 0; c < ncomp_; ++c) {
      int nc = static_cast<int>(comp_rows_[c].size());
      const auto& cols = comp_cols_[c];
      int na = static_cast<int>(cols.size());
      if (nc == 0 || na == 0) continue;
      for (int a = 0; a < na; ++a) pos[cols[a]] = a;
      Eigen::MatrixXd F1 = Eigen::MatrixXd::Zero(nc, na);
      for (int i = 0; i < nc; ++i)
        for (const auto& [j, v] : row_free_[comp_rows_[c][i]]) F1(i, pos[j]) = v;
      comp_Y_[c] = comp_llt_[c].solve(F1);
      Eigen::MatrixXd Gc = F1.transpose() * comp_Y_[c];
      for (int a = 0; a < na; ++a)
        for (int b2 = 0; b2 < na; ++b2) G(cols[a], cols[b2]) += Gc(a, b2);
      for (int a = 0; a < na; ++a) pos[cols[a]] = -1;
    }
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(p_ + m2, p_ + m2);
    K.topLeftCorner(p_, p_) = -G;
    for (int i = 0; i < m2; ++i)
      for (const auto& [j, v] : row_free_[pure_rows_[i]]) {
        K(p_ + i, j) = v;
        K(j, p_ + i) = v;
      }
    // Full-pivot LU gives rank detection on the usual small systems; large
    // coupled solves get an up-front quasi-definite regularization (absorbed
    // by refinement) and a partial-pivot factorization.
    saddle_big_ = p_ + m2 > 512;
    if (saddle_big_) {
      double reg = 1e-10 * std::max(1.0, K.cwiseAbs().maxCoeff());
      K.topLeftCorner(p_, p_).diagonal().array() -= reg;
      K.bottomRightCorner(m2, m2).diagonal().array() += reg;
      saddle_plu_.compute(K);
    } else {
      saddle_lu_.compute(K);
      if (!saddle_lu_.isInvertible()) {
        // Quasi-definite regularization; refinement absorbs the perturbation.
        double reg = 1e-10 * std::max(1.0, K.cwiseAbs().maxCoeff());
        K.topLeftCorner(p_, p_).diagonal().array() -= reg;
        K.bottomRightCorner(m2, m2).diagonal().array() += reg;
        saddle_lu_.compute(K);
        if (!saddle_lu_.isInvertible()) return false;
      }
    }
  }

  // Second right-hand side (the dtau column), reused by both directions.
  Eigen::VectorXd h1(m_);
  for (int k = 0; k < m_; ++k) h1[k] = 2.0 * b_[k] - bmA_[k];  // b + A(WCW)
  solve_saddle(h1, f_, h_y_, h_u_);
  return true;
}

// Solves [M F1; F2 0...; F1' F2' 0] style system: rows of p_rows correspond to
// all m constraints (PSD rows use M, pure rows use F2 only), q is the free
// dual-feasibility right-hand side.  One round of iterative refinement.
void Ipm::solve_saddle(const Eigen::VectorXd& p_rows, const Eigen::VectorXd& q,
                       Eigen::VectorXd& dy, Eigen::VectorXd& du) const {
  const int m2 = static_cast<int>(pure_rows_.size());
  auto solve_once = [&](const Eigen::VectorXd& pr, const Eigen::VectorXd& qr,
                        Eigen::VectorXd& oy, Eigen::VectorXd& ou) {
    oy = Eigen::VectorXd::Zero(m_);
    ou = Eigen::VectorXd::Zero(p_);
    std::vector<Eigen::VectorXd> t(ncomp_);
    for (int c = 0; c < ncomp_; ++c) {
      int nc = static_cast<int>(comp_rows_[c].size());
      if (nc == 0) continue;
      Eigen::VectorXd rc(nc);
      for (int i = 0; i < nc; ++i) rc[i] = pr[comp_rows_[c][i]];
      t[c] = comp_llt_[c].solve(rc);
    }
    if (p_ > 0 || m2 > 0) {
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p_ + m2);
      rhs.head(p_) = qr;
      for (int c = 0; c < ncomp_; ++c) {
        int nc = static_cast<int>(comp_rows_[c].size());
        for (int i = 0; i < nc; ++i)
          for (const auto& [j, v] : row_free_[comp_rows_[c][i]]) rhs[j] -= v * t[c][i];
      }
      for (int i = 0; i < m2; ++i) rhs[p_ + i] = pr[pure_rows_[i]];
      Eigen::VectorXd sol;
      if (saddle_big_)
        sol = saddle_plu_.solve(rhs);
      else
        sol = saddle_lu_.solve(rhs);
      ou = sol.head(p_);
      for (int i = 0; i < m2; ++i) oy[pure_rows_[i]] = sol[p_ + i];
    }
    for (int c = 0; c < ncomp_; ++c) {
      int nc = static_cast<int>(comp_rows_[c].size());
      if (nc == 0) continue;
      Eigen::VectorXd yc = t[c];
      const auto& cols = comp_cols_[c];
      if (!cols.empty()) {
        Eigen::VectorXd oa(cols.size());
        for (int a = 0; a < static_cast<int>(cols.size()); ++a) oa[a] = ou[cols[a]];
        yc.noalias() -= comp_Y_[c] * oa;
      }
      for (int i = 0; i < nc; ++i) oy[comp_rows_[c][i]] = yc[i];
    }
  };

  solve_once(p_rows, q, dy, du);
  // Refinement against the assembled (unregularized) system.
  double scale = 1.0 + p_rows.cwiseAbs().maxCoeff() + (p_ ? q.cwiseAbs().maxCoeff() : 0.0);
  for (int pass = 0; pass < 3; ++pass) {
    Eigen::VectorXd res_rows, res_free;
    apply_kkt(dy, du, res_rows, res_free);
    res_rows = p_rows - res_rows;
    res_free = q - res_free;
    double rn = res_rows.cwiseAbs().maxCoeff() + (p_ ? res_free.cwiseAbs().maxCoeff() : 0.0);
    if (rn < 1e-14 * scale) break;
    Eigen::VectorXd cy, cu;
    solve_once(res_rows, res_free, cy, cu);
    dy += cy;
    du += cu;
  }
}

// Applies the saddle operator: rows get M dy + F du (PSD rows) or F du (pure
// rows); the free part gets F' dy.
void Ipm::apply_kkt(const Eigen::VectorXd& dy, const Eigen::VectorXd& du,
                    Eigen::VectorXd& out_rows, Eigen::VectorXd& out_free) const {
  out_rows = Eigen::VectorXd::Zero(m_);
  out_free = Eigen::VectorXd::Zero(p_);
  for (int c = 0; c < ncomp_; ++c) {
    int nc = static_cast<int>(comp_rows_[c].size());
    if (nc == 0) continue;
    Eigen::VectorXd yc(nc);
    for (int i = 0; i < nc; ++i) yc[i] = dy[comp_rows_[c][i]];
    Eigen::VectorXd mv = comp_M_[c] * yc;
    for (int i = 0; i < nc; ++i) out_rows[comp_rows_[c][i]] = mv[i];
  }
  for (int k = 0; k < m_; ++k) {
    for (const auto& [j, v] : row_free_[k]) {
      out_rows[k] += v * du[j];
      out_free[j] += v * dy[k];
    }
  }
}

Ipm::Direction Ipm::newton(double eta, const std::vector<Eigen::MatrixXd>& Rc, double rtk) {
  Direction d;
  // Per-block S = D Rc D' + eta W Rd W, used by both r1 and r3.
  std::vector<Eigen::MatrixXd> S(nb_);
  double cS = 0.0;
  for (int b = 0; b < nb_; ++b) {
    S[b] = nt_[b].D * Rc[b] * nt_[b].D.transpose() + eta * nt_[b].W * Rd_[b] * nt_[b].W;
    cS += (C_[b].cwiseProduct(S[b])).sum();
  }
  Eigen::VectorXd r1 = -eta * P_;
  for (int k = 0; k < m_; ++k)
    for (const auto& e : row_entries_[k]) {
      const Eigen::MatrixXd& Sb = S[e.block];
      r1[k] -= (e.row == e.col ? e.value * Sb(e.row, e.col) : 2.0 * e.value * Sb(e.row, e.col));
    }
  Eigen::VectorXd r2 = -eta * rf_;

  Eigen::VectorXd gy, gu;
  solve_saddle(r1, r2, gy, gu);

  double r3 = -eta * Gs_ + cS + rtk / tau_;
  double num = r3 - bmA_.dot(gy) + f_.dot(gu);
  double den = bmA_.dot(h_y_) - f_.dot(h_u_) + cWc_ + kappa_ / tau_;
  d.dtau = num / den;
  d.dy = gy + d.dtau * h_y_;
  d.du = gu + d.dtau * h_u_;
  d.dkappa = (rtk - kappa_ * d.dtau) / tau_;

  d.dZ.assign(nb_, {});
  d.dX.assign(nb_, {});
  for (int b = 0; b < nb_; ++b) {
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(dims_[b], dims_[b]);
    for (const auto& t : touches_[b]) add_scaled(t.es, d.dy[t.row], adj);
    d.dZ[b] = -eta * Rd_[b] + d.dtau * C_[b] - adj;
    d.dZ[b] = 0.5 * (d.dZ[b] + d.dZ[b].transpose()).eval();
    d.dX[b] = nt_[b].D * Rc[b] * nt_[b].D.transpose() - nt_[b].W * d.dZ[b] * nt_[b].W;
    d.dX[b] = 0.5 * (d.dX[b] + d.dX[b].transpose()).eval();
  }

  return d;
}

double Ipm::max_cone_step(const std::vector<Eigen::MatrixXd>& Mats,
                          const std::vector<Eigen::MatrixXd>& dMats) const {
  double alpha = std::numeric_limits<double>::infinity();
  for (size_t b = 0; b < Mats.size(); ++b) {
    Eigen::LLT<Eigen::MatrixXd> llt(Mats[b]);
    double lmin;
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd L = llt.matrixL();
      Eigen::MatrixXd T = L.triangularView<Eigen::Lower>().solve(dMats[b]);
      T = L.triangularView<Eigen::Lower>().solve(T.transpose().eval());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (T + T.transpose()),
                                                        Eigen::EigenvaluesOnly);
      lmin = es.eigenvalues().minCoeff();
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Mats[b]);
      Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-14);
      Eigen::MatrixXd Xh =
          es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(Xh * dMats[b] * Xh, Eigen::EigenvaluesOnly);
      lmin = es2.eigenvalues().minCoeff();
    }
    if (lmin < 0.0) alpha = std::min(alpha, -1.0 / lmin);
  }
  return alpha;
}

bool Ipm::extract_optimal(SdpSolution& sol) const {
  sol.X.assign(nb_, {});
  sol.Z.assign(nb_, {});
  for (int b = 0; b < nb_; ++b) {
    sol.X[b] = (sblk_[b] / (srhs_ * tau_)) * X_[b];
    sol.Z[b] = Z_[b] / (sblk_[b] * sobj_ * tau_);
  }
  sol.free_vars.resize(p_);
  for (int j = 0; j < p_; ++j) sol.free_vars[j] = gcol_[j] * u_[j] / (srhs_ * tau_);
  sol.y.resize(m_);
  for (int k = 0; k < m_; ++k) sol.y[k] = drow_[k] * y_[k] / (sobj_ * tau_);

  KktResiduals r = residuals(orig_, sol.X, sol.free_vars, sol.y, sol.Z);
  sol.primal_residual = r.primal;
  sol.dual_residual = r.dual;
  sol.gap = r.gap;
  sol.primal_objective = 0.0;
  for (const auto& e : orig_.objective_entries)
    sol.primal_objective += (e.row == e.col ? 1.0 : 2.0) * e.value * sol.X[e.block](e.row, e.col);
  for (int j = 0; j < p_ && !orig_.objective_free.empty(); ++j)
    sol.primal_objective += orig_.objective_free[j] * sol.free_vars[j];
  sol.dual_objective = 0.0;
  for (int k = 0; k < m_; ++k) sol.dual_objective += orig_.constraints[k].rhs * sol.y[k];
  return r.primal <= opts_.feas_tol && r.dual <= opts_.feas_tol && r.gap <= opts_.gap_tol;
}

bool Ipm::extract_primal_infeasible(SdpSolution& sol) const {
  // Farkas ray: adjoint(y) + Z = 0, F'y = 0, b'y = 1 with Z PSD.
  Eigen::VectorXd y(m_);
  for (int k = 0; k < m_; ++k) y[k] = drow_[k] * y_[k];
  std::vector<Eigen::MatrixXd> Z(nb_);
  for (int b = 0; b < nb_; ++b) Z[b] = Z_[b] / sblk_[b];
  double bty = 0.0;
  for (int k = 0; k < m_; ++k) bty += orig_.constraints[k].rhs * y[k];
  if (bty <= 0.0) return false;
  y /= bty;
  for (auto& blk : Z) blk /= bty;

  double err = 0.0, scale = 1.0;
  std::vector<Eigen::MatrixXd> adj = zero_blocks(dims_);
  for (int k = 0; k < m_; ++k)
    for (const auto& e : orig_.constraints[k].entries) {
      adj[e.block](e.row, e.col) += y[k] * e.value;
      if (e.row != e.col) adj[e.block](e.col, e.row) += y[k] * e.value;
    }
  for (int b = 0; b < nb_; ++b) err = std::max(err, (adj[b] + Z[b]).cwiseAbs().maxCoeff());
  Eigen::VectorXd fty = Eigen::VectorXd::Zero(p_);
  for (int k = 0; k < m_; ++k)
    for (const auto& [j, v] : orig_.constraints[k].free_terms) fty[j] += v * y[k];
  if (p_ > 0) err = std::max(err, fty.cwiseAbs().maxCoeff());
  for (const auto& con : orig_.constraints)
    for (const auto& e : con.entries) scale = std::max(scale, std::fabs(e.value));
  if (err > 1e3 * opts_.feas_tol * scale) return false;

  sol.y = y;
  sol.Z = Z;
  sol.X = zero_blocks(dims_);
  sol.free_vars = Eigen::VectorXd::Zero(p_);
  sol.primal_residual = err;
  sol.dual_residual = err;
  sol.gap = std::numeric_limits<double>::quiet_NaN();
  return true;
}

bool Ipm::extract_dual_infeasible(SdpSolution& sol) const {
  // Improving ray: A(X) + Fu = 0, X PSD, <C,X> + f'u = -1.
  std::vector<Eigen::MatrixXd> X(nb_);
  for (int b = 0; b < nb_; ++b) X[b] = sblk_[b] * X_[b];
  Eigen::VectorXd u(p_);
  for (int j = 0; j < p_; ++j) u[j] = gcol_[j] * u_[j];
  double cobj = 0.0;
  for (const auto& e : orig_.objective_entries)
    cobj += (e.row == e.col ? 1.0 : 2.0) * e.value * X[e.block](e.row, e.col);
  for (int j = 0; j < p_ && !orig_.objective_free.empty(); ++j)
    cobj += orig_.objective_free[j] * u[j];
  if (cobj >= 0.0) return false;
  double s = -1.0 / cobj;
  for (auto& blk : X) blk *= s;
  u *= s;

  double err = 0.0, scale = 1.0;
  for (const auto& con : orig_.constraints) {
    double lhs = inner_entries(con.entries, X);
    for (const auto& [j, v] : con.free_terms) lhs += v * u[j];
    err = std::max(err, std::fabs(lhs));
    scale = std::max(scale, std::fabs(con.rhs));
  }
  if (err > 1e3 * opts_.feas_tol * scale) return false;

  sol.X = X;
  sol.free_vars = u;
  sol.y = Eigen::VectorXd::Zero(m_);
  sol.Z = zero_blocks(dims_);
  sol.primal_objective = -1.0;
  sol.primal_residual = err;
  sol.gap = std::numeric_limits<double>::quiet_NaN();
  return true;
}

SdpSolution Ipm::finish(SdpStatus status) {
  // Report the best candidate seen, not whatever iterate the run broke on.
  SdpSolution sol;
  if (best_iter_ >= 0)
    sol = best_;
  else
    extract_optimal(sol);
  sol.status = status;
  sol.iterations = iters_;
  sol.trace = trace_;
  return sol;
}

SdpSolution Ipm::run() {
  X_ = zero_blocks(dims_);
  Z_ = zero_blocks(dims_);
  for (int b = 0; b < nb_; ++b) {
    X_[b].setIdentity(dims_[b], dims_[b]);
    Z_[b].setIdentity(dims_[b], dims_[b]);
  }
  y_ = Eigen::VectorXd::Zero(m_);
  u_ = Eigen::VectorXd::Zero(p_);
  tau_ = 1.0;
  kappa_ = 1.0;

  double nu = 1.0;
  for (int d : dims_) nu += d;

  for (iters_ = 0; iters_ < opts_.max_iters; ++iters_) {
    // Residuals of the homogeneous model.
    P_.resize(m_);
    for (int k = 0; k < m_; ++k) {
      double ax = inner_entries(row_entries_[k], X_);
      for (const auto& [j, v] : row_free_[k]) ax += v * u_[j];
      P_[k] = ax - tau_ * b_[k];
    }
    Rd_.assign(nb_, {});
    for (int b = 0; b < nb_; ++b) {
      Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(dims_[b], dims_[b]);
      for (const auto& t : touches_[b]) add_scaled(t.es, y_[t.row], adj);
      Rd_[b] = adj + Z_[b] - tau_ * C_[b];
    }
    rf_.resize(p_);
    rf_.setZero();
    for (int k = 0; k < m_; ++k)
      for (const auto& [j, v] : row_free_[k]) rf_[j] += v * y_[k];
    rf_ -= tau_ * f_;
    double xz = tau_ * kappa_;
    for (int b = 0; b < nb_; ++b) xz += (X_[b].cwiseProduct(Z_[b])).sum();
    double pobj = f_.dot(u_), dobj = b_.dot(y_);
    for (int b = 0; b < nb_; ++b) pobj += (C_[b].cwiseProduct(X_[b])).sum();
    Gs_ = dobj - pobj - kappa_;
    double mu = xz / nu;

    // Convergence and infeasibility tests on the unscaled candidates.
    {
      SdpSolution sol;
      sol.iterations = iters_;
      if (extract_optimal(sol)) {
        sol.status = SdpStatus::kOptimal;
        sol.trace = trace_;
        return sol;
      }
      double metric = std::max({sol.primal_residual / opts_.feas_tol,
                                sol.dual_residual / opts_.feas_tol, sol.gap / opts_.gap_tol});
      if (std::isfinite(metric) && metric < 0.99 * best_metric_) {
        best_metric_ = metric;
        best_iter_ = iters_;
        best_ = sol;
      }
      if (kappa_ > 1e4 * tau_ || mu < 1e-10) {
        if (extract_primal_infeasible(sol)) {
          sol.status = SdpStatus::kPrimalInfeasible;
          sol.trace = trace_;
          return sol;
        }
        if (extract_dual_infeasible(sol)) {
          sol.status = SdpStatus::kDualInfeasible;
          sol.trace = trace_;
          return sol;
        }
      }
      if (!std::isfinite(mu) || mu > 1e60) return finish(SdpStatus::kNumericalFailure);
      // Near-converged but stalled: the candidate residuals sit at their
      // numerical floor and further iterations cannot improve them, so stop
      // rather than run into a factorization breakdown.  Gated on being in
      // the convergent regime so infeasibility detection (where candidate
      // residuals diverge as tau -> 0) is never cut short.
      if (best_iter_ >= 0 && best_metric_ < 1e3 && iters_ - best_iter_ >= 8)
        return finish(SdpStatus::kNumericalFailure);
    }

    if (!factor_iteration()) return finish(SdpStatus::kNumericalFailure);

    // Predictor (affine direction aiming at zero residuals and complementarity).
    std::vector<Eigen::MatrixXd> Rc(nb_);
    for (int b = 0; b < nb_; ++b) {
      Rc[b] = Eigen::MatrixXd::Zero(dims_[b], dims_[b]);
      Rc[b].diagonal() = -nt_[b].sigma;
    }
    Direction aff = newton(1.0, Rc, -tau_ * kappa_);

    double amax = std::min(max_cone_step(X_, aff.dX), max_cone_step(Z_, aff.dZ));
    if (aff.dtau < 0.0) amax = std::min(amax, -tau_ / aff.dtau);
    if (aff.dkappa < 0.0) amax = std::min(amax, -kappa_ / aff.dkappa);
    double a_aff = std::min(1.0, opts_.step_fraction * amax);

    double gap_aff = (tau_ + a_aff * aff.dtau) * (kappa_ + a_aff * aff.dkappa);
    for (int b = 0; b < nb_; ++b)
      gap_aff += ((X_[b] + a_aff * aff.dX[b]).cwiseProduct(Z_[b] + a_aff * aff.dZ[b])).sum();
    double sigma = std::clamp(std::pow(std::max(gap_aff, 0.0) / xz, 3.0), 0.0, 1.0);

    // Corrector with centering and second-order term.
    for (int b = 0; b < nb_; ++b) {
      Eigen::MatrixXd dXh = nt_[b].Dinv * aff.dX[b] * nt_[b].Dinv.transpose();
      Eigen::MatrixXd dZh = nt_[b].D.transpose() * aff.dZ[b] * nt_[b].D;
      Eigen::MatrixXd second = dXh * dZh;
      second = 0.5 * (second + second.transpose()).eval();
      Eigen::MatrixXd target = -second;
      target.diagonal().array() += sigma * mu;
      target.diagonal().array() -= nt_[b].sigma.array().square();
      Rc[b] = lyap_inverse(nt_[b].sigma, target);
    }
    double rtk = sigma * mu - tau_ * kappa_ - aff.dtau * aff.dkappa;
    Direction dir = newton(1.0 - sigma, Rc, rtk);

    amax = std::min(max_cone_step(X_, dir.dX), max_cone_step(Z_, dir.dZ));
    if (dir.dtau < 0.0) amax = std::min(amax, -tau_ / dir.dtau);
    if (dir.dkappa < 0.0) amax = std::min(amax, -kappa_ / dir.dkappa);
    double alpha = std::min(1.0, opts_.step_fraction * amax);

    for (int b = 0; b < nb_; ++b) {
      X_[b] += alpha * dir.dX[b];
      Z_[b] += alpha * dir.dZ[b];
      X_[b] = 0.5 * (X_[b] + X_[b].transpose()).eval();
      Z_[b] = 0.5 * (Z_[b] + Z_[b].transpose()).eval();
    }
    y_ += alpha * dir.dy;
    u_ += alpha * dir.du;
    tau_ += alpha * dir.dtau;
    kappa_ += alpha * dir.dkappa;

    char line[160];
    std::snprintf(line, sizeof(line),
                  "it %3d  mu=%9.3e  pinf=%9.3e  dinf=%9.3e  gap=%9.3e  tau=%8.3e  "
                  "kappa=%8.3e  sigma=%5.3f  alpha=%5.3f\n",
                  iters_, mu, P_.size() ? P_.cwiseAbs().maxCoeff() : 0.0,
                  [&] {
                    double v = rf_.size() ? rf_.cwiseAbs().maxCoeff() : 0.0;
                    for (const auto& blk : Rd_) v = std::max(v, blk.cwiseAbs().maxCoeff());
                    return v;
                  }(),
                  std::fabs(Gs_), tau_, kappa_, sigma, alpha);
    trace_ += line;
  }
  return finish(SdpStatus::kMaxIterations);
}

// Presolve wrapper: strips empty rows and unused free columns, handles the
// trivial cases those can produce, then defers to the interior-point core.
SdpSolution solve_presolved(const SdpProblem& prob, const SolverOptions& opts) {
  const int m = prob.n_constraints();
  const int nb = static_cast<int>(prob.block_dims.size());

  // Empty constraint rows: 0 = rhs is either vacuous or a Farkas certificate.
  for (int k = 0; k < m; ++k) {
    const auto& con = prob.constraints[k];
    if (con.entries.empty() && con.free_terms.empty()) {
      if (std::fabs(con.rhs) <= 1e-12) continue;
      SdpSolution sol;
      sol.status = SdpStatus::kPrimalInfeasible;
      sol.y = Eigen::VectorXd::Zero(m);
      sol.y[k] = 1.0 / con.rhs;
      sol.X = zero_blocks(prob.block_dims);
      sol.Z = zero_blocks(prob.block_dims);
      sol.free_vars = Eigen::VectorXd::Zero(prob.n_free);
      sol.primal_residual = 0.0;
      sol.dual_residual = 0.0;
      sol.trace = "presolve: constraint with empty left-hand side and nonzero rhs\n";
      return sol;
    }
  }

  // Free columns absent from every constraint: unbounded if they carry
  // objective weight, otherwise fixed at zero (handled transparently since
  // their optimal value is zero in the embedding as well).
  if (prob.n_free > 0 && !prob.objective_free.empty()) {
    std::vector<bool> used(prob.n_free, false);
    for (const auto& con : prob.constraints)
      for (const auto& [j, v] : con.free_terms) {
        (void)v;
        used[j] = true;
      }
    for (int j = 0; j < prob.n_free; ++j)
      if (!used[j] && std::fabs(prob.objective_free[j]) > 1e-12) {
        SdpSolution sol;
        sol.status = SdpStatus::kDualInfeasible;
        sol.X = zero_blocks(prob.block_dims);
        sol.Z = zero_blocks(prob.block_dims);
        sol.y = Eigen::VectorXd::Zero(m);
        sol.free_vars = Eigen::VectorXd::Zero(prob.n_free);
        sol.free_vars[j] = -1.0 / prob.objective_free[j];
        sol.primal_objective = -1.0;
        sol.primal_residual = 0.0;
        sol.trace = "presolve: free variable with objective weight in no constraint\n";
        return sol;
      }
  }

  // No constraints at all: X = 0 is optimal iff C is PSD blockwise.
  if (m == 0) {
    SdpSolution sol;
    std::vector<Eigen::MatrixXd> C = zero_blocks(prob.block_dims);
    for (const auto& e : prob.objective_entries) {
      C[e.block](e.row, e.col) += e.value;
      if (e.row != e.col) C[e.block](e.col, e.row) += e.value;
    }
    for (int b = 0; b < nb; ++b) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C[b]);
      if (es.eigenvalues().minCoeff() < -1e-12) {
        sol.status = SdpStatus::kDualInfeasible;
        sol.X = zero_blocks(prob.block_dims);
        Eigen::VectorXd v = es.eigenvectors().col(0);
        sol.X[b] = v * v.transpose() / -es.eigenvalues().minCoeff();
        sol.Z = zero_blocks(prob.block_dims);
        sol.y = Eigen::VectorXd(0);
        sol.free_vars = Eigen::VectorXd::Zero(prob.n_free);
        sol.primal_objective = -1.0;
        sol.primal_residual = 0.0;
        sol.trace = "presolve: unconstrained objective with negative curvature\n";
        return sol;
      }
    }
    sol.status = SdpStatus::kOptimal;
    sol.X = zero_blocks(prob.block_dims);
    sol.Z = C;
    sol.y = Eigen::VectorXd(0);
    sol.free_vars = Eigen::VectorXd::Zero(prob.n_free);
    sol.primal_objective = 0.0;
    sol.dual_objective = 0.0;
    sol.primal_residual = 0.0;
    sol.dual_residual = 0.0;
    sol.gap = 0.0;
    sol.trace = "presolve: unconstrained problem\n";
    return sol;
  }

  Ipm ipm(prob, opts);
  return ipm.run();
}

}  // namespace

SdpSolution solve_sdp(const SdpProblem& prob, const SolverOptions& opts) {
  if (opts.max_iters <= 0 || opts.feas_tol <= 0.0 || opts.gap_tol <= 0.0 ||
      opts.step_fraction <= 0.0 || opts.step_fraction >= 1.0)
    throw std::invalid_argument("solve_sdp: invalid solver options");
  prob.validate();
  return solve_presolved(prob, opts);
}

// ---------------------------------------------------------------------------
// Sparse text format
// ---------------------------------------------------------------------------

namespace {
void write_double(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}
}  // namespace

void write_sdp(std::ostream& os, const SdpProblem& prob) {
  os << "sdp 1\n";
  os << "blocks " << prob.block_dims.size() << "\n";
  for (size_t i = 0; i < prob.block_dims.size(); ++i)
    os << prob.block_dims[i] << (i + 1 < prob.block_dims.size() ? ' ' : '\n');
  if (prob.block_dims.empty()) os << "\n";
  os << "free " << prob.n_free << "\n";
  os << "objective_entries " << prob.objective_entries.size() << "\n";
  for (const auto& e : prob.objective_entries) {
    os << e.block << ' ' << e.row << ' ' << e.col << ' ';
    write_double(os, e.value);
    os << "\n";
  }
  os << "objective_free " << prob.objective_free.size() << "\n";
  for (size_t i = 0; i < prob.objective_free.size(); ++i) {
    write_double(os, prob.objective_free[i]);
    os << (i + 1 < prob.objective_free.size() ? ' ' : '\n');
  }
  os << "constraints " << prob.constraints.size() << "\n";
  for (const auto& con : prob.constraints) {
    os << "constraint ";
    write_double(os, con.rhs);
    os << ' ' << con.entries.size() << ' ' << con.free_terms.size() << "\n";
    for (const auto& e : con.entries) {
      os << e.block << ' ' << e.row << ' ' << e.col << ' ';
      write_double(os, e.value);
      os << "\n";
    }
    for (const auto& [j, v] : con.free_terms) {
      os << j << ' ';
      write_double(os, v);
      os << "\n";
    }
  }
}

SdpProblem read_sdp(std::istream& is) {
  auto expect = [&](const char* tag) {
    std::string tok;
    if (!(is >> tok) || tok != tag)
      throw std::runtime_error(std::string("read_sdp: expected '") + tag + "', got '" + tok + "'");
  };
  SdpProblem prob;
  expect("sdp");
  int version;
  is >> version;
  if (version != 1) throw std::runtime_error("read_sdp: unsupported version");
  expect("blocks");
  size_t nb;
  is >> nb;
  prob.block_dims.resize(nb);
  for (auto& d : prob.block_dims) is >> d;
  expect("free");
  is >> prob.n_free;
  expect("objective_entries");
  size_t ne;
  is >> ne;
  prob.objective_entries.resize(ne);
  for (auto& e : prob.objective_entries) is >> e.block >> e.row >> e.col >> e.value;
  expect("objective_free");
  size_t nf;
  is >> nf;
  prob.objective_free.resize(nf);
  for (auto& v : prob.objective_free) is >> v;
  expect("constraints");
  size_t m;
  is >> m;
  prob.constraints.resize(m);
  for (auto& con : prob.constraints) {
    expect("constraint");
    size_t np, nfree;
    is >> con.rhs >> np >> nfree;
    con.entries.resize(np);
    for (auto& e : con.entries) is >> e.block >> e.row >> e.col >> e.value;
    con.free_terms.resize(nfree);
    for (auto& [j, v] : con.free_terms) is >> j >> v;
  }
  if (!is) throw std::runtime_error("read_sdp: truncated input");
  prob.validate();
  return prob;
}

}  // namespace funnelcert
