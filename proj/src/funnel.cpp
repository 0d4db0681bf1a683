#include "funnelcert/funnel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

namespace funnelcert {
namespace {

constexpr double kRhoFloor = 1e-8;  // knot-value lower bound in the rho step
constexpr double kPsdSlack = 1e-9;   // eigenvalue slack for containment checks
constexpr double kProbeSlack = 1e-7;  // probe optima are only solver-accurate
// Extra decrease demanded by the rho step, in the scaled bracket's units, so
// that its boundary solution stays certifiable by a fresh multiplier step
// despite both solves carrying their own tolerances.
constexpr double kStepPad = 1e-6;
// Residual level at which a certificate still counts as verified.  Margin
// optima sit on the cone boundary, where the tight solve can stall a decade
// or two short of the optimization tolerance.
constexpr double kVerifyTol = 1e-6;

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double qnan() { return std::numeric_limits<double>::quiet_NaN(); }

double min_eigenvalue(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("funnel: symmetric eigensolver failed");
  return es.eigenvalues().minCoeff();
}

// Lifts a time-only polynomial (local coordinate s) into (s, x1..xn).
Polynomial lift(const Polynomial& p, const VarSet& target) {
  return p.subst(target, {Polynomial::variable(target, 0)});
}

// Piecewise-linear interpolant of the given knot values.
PiecewisePolynomial linear_interp(const std::vector<double>& knots,
                                  const std::vector<double>& values) {
  const VarSet ts{true, 0, 0};
  std::vector<Polynomial> pieces;
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    Polynomial p = Polynomial::constant(ts, values[i]);
    p += Polynomial::variable(ts, 0) * (values[i + 1] - values[i]);
    pieces.push_back(std::move(p));
  }
  return PiecewisePolynomial(knots, std::move(pieces));
}

void require_match(const LyapunovCandidate& cand, const SystemDynamics& dynamics) {
  if (dynamics.n() != cand.n)
    throw std::invalid_argument("funnel: state dimension mismatch");
  if (dynamics.knots() != cand.knots())
    throw std::invalid_argument("funnel: dynamics and candidate must share the knot grid");
}

// Fixed coefficients many orders below the data scale are arithmetic residue
// of near-degenerate trajectory fits; each would otherwise demand its own
// exactly-matched Gram row.  Dropping them perturbs the certificate by far
// less than the enforced decrease margin.
void scrub_fixed_noise(DecisionPoly& p) {
  double scale = 1.0;
  for (const auto& [m, e] : p.terms()) scale = std::max(scale, std::abs(e.constant));
  std::vector<std::pair<Monomial, LinExpr>> junk;
  for (const auto& [m, e] : p.terms())
    if (m.degree() > 0 && e.is_constant() && std::abs(e.constant) <= 1e-9 * scale)
      junk.emplace_back(m, e);
  for (const auto& [m, e] : junk) p.add_term(m, -e);
}

// A sum of squares has even total degree, so the leading odd-degree terms of a
// certificate expression must vanish at any feasible point. Decision
// coefficients are pinned by equality constraints; fixed coefficients at
// solver-noise scale (stray products of trajectory-fit terms that fell below
// the coefficient floor) are dropped, and anything larger is a genuine degree
// obstruction.
void strip_odd_leading(DecisionPoly& p, SosProgram& prog, const char* what) {
  double scale = 1.0;
  for (const auto& [m, e] : p.terms()) scale = std::max(scale, std::abs(e.constant));
  while (!p.is_zero() && p.total_degree() % 2 != 0) {
    const int top = p.total_degree();
    std::vector<std::pair<Monomial, LinExpr>> leading;
    for (const auto& [m, e] : p.terms())
      if (m.degree() == top) leading.emplace_back(m, e);
    for (const auto& [m, e] : leading) {
      if (e.is_constant()) {
        if (std::abs(e.constant) > 1e-9 * scale)
          throw std::invalid_argument(std::string("funnel: ") + what +
                                      " has odd total degree; raise the multiplier state degree");
      } else {
        prog.linear_constraints.push_back({e, true});
      }
      p.add_term(m, -e);
    }
  }
}

// The support of a sum of squares lies in the hull of its even exponent
// points, so a support monomial no Gram-basis pair can reach forces its own
// coefficient to zero.  Fixed residue there is dropped (it would otherwise
// read as an unsatisfiable constraint); anything above noise scale means the
// multiplier bases genuinely cannot express the certificate.
bool drop_unreachable_fixed(DecisionPoly& p, const char* what) {
  if (p.is_zero()) return false;
  const std::vector<Monomial> basis = gram_basis(p);
  std::set<Monomial, MonomialLess> sums;
  for (size_t a = 0; a < basis.size(); ++a)
    for (size_t b = a; b < basis.size(); ++b) {
      Monomial m = basis[a];
      for (size_t k = 0; k < m.exp.size(); ++k) m.exp[k] += basis[b].exp[k];
      sums.insert(std::move(m));
    }
  double scale = 1.0;
  for (const auto& [m, e] : p.terms()) scale = std::max(scale, std::abs(e.constant));
  std::vector<std::pair<Monomial, LinExpr>> gone;
  for (const auto& [m, e] : p.terms()) {
    if (m.degree() == 0 || !e.is_constant() || sums.count(m) != 0) continue;
    if (std::abs(e.constant) > 1e-7 * scale)
      throw std::invalid_argument(std::string("funnel: ") + what +
                                  " has support no sum of squares can match; raise the "
                                  "multiplier degrees");
    gone.emplace_back(m, e);
  }
  for (const auto& [m, e] : gone) p.add_term(m, -e);
  return !gone.empty();
}

// Every certificate expression passes through here before compilation.
void sanitize_bracket(DecisionPoly& p, SosProgram& prog, const char* what) {
  scrub_fixed_noise(p);
  for (;;) {
    strip_odd_leading(p, prog, what);
    if (p.is_zero() || !drop_unreachable_fixed(p, what)) return;
  }
}

// Uniform sample coordinates including both interval endpoints, so sampled
// certificates pin down both one-sided derivatives at every knot.
std::vector<double> sample_grid(int m) {
  if (m < 2) throw std::invalid_argument("funnel: samples_per_interval must be at least 2");
  std::vector<double> s(m);
  for (int j = 0; j < m; ++j) s[j] = static_cast<double>(j) / (m - 1);
  return s;
}

// Everything about V on one knot interval, in local coordinates (s, x).
struct IntervalData {
  double t0 = 0.0;
  double dt = 0.0;
  VarSet vars;         // (s, x1..xn)
  Polynomial Vbar;     // |x - xhat0(s)|^2_{P0(s)}
  Polynomial Vdot;     // d/dt Vbar along the dynamics
  Polynomial rho;      // current rho piece
  Polynomial rho_dot;  // its global-time derivative
  Polynomial window;   // s (1 - s), vanishing at the knots
};

IntervalData make_interval(const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                           int i) {
  const int n = cand.n;
  IntervalData d;
  d.vars = VarSet{true, n, 0};
  const auto& knots = cand.knots();
  d.t0 = knots[i];
  d.dt = knots[i + 1] - knots[i];

  std::vector<Polynomial> err(n);  // x_k - xhat0_k(s)
  for (int k = 0; k < n; ++k)
    err[k] = Polynomial::variable(d.vars, d.vars.state_index(k)) -
             lift(cand.xhat0.at(k, 0).piece(i), d.vars);

  d.Vbar = Polynomial(d.vars);
  for (int r = 0; r < n; ++r)
    for (int c = r; c < n; ++c) {
      const Polynomial prc = lift(cand.P0.at(r, c).piece(i), d.vars);
      d.Vbar += (r == c ? 1.0 : 2.0) * prc * err[r] * err[c];
    }

  d.Vdot = d.Vbar.diff(d.vars.time_index()) * (1.0 / d.dt);
  for (int k = 0; k < n; ++k)
    d.Vdot += d.Vbar.diff(d.vars.state_index(k)) * dynamics.component(k).piece(i);

  d.rho = lift(cand.rho.piece(i), d.vars);
  d.rho_dot = lift(cand.rho.piece(i).diff(0), d.vars) * (1.0 / d.dt);

  Monomial s1(d.vars.size()), s2(d.vars.size());
  s1.exp[0] = 1;
  s2.exp[0] = 2;
  d.window = Polynomial(d.vars);
  d.window.add_term(s1, 1.0);
  d.window.add_term(s2, -1.0);
  return d;
}

// Margin solve with a boundary-stall fallback: when the tight solve fails to
// reach feasibility, retry at the verification tolerance before giving up.
SosSolution solve_margin(const SosProgram& prog, const SolverOptions& sopt) {
  SosSolution sol = solve_sos(prog, sopt);
  const bool stalled = sol.status == SosStatus::kNumericalFailure ||
                       sol.status == SosStatus::kMaxIterations;
  if (!stalled || sopt.feas_tol >= kVerifyTol) return sol;
  SolverOptions loose = sopt;
  loose.feas_tol = kVerifyTol;
  return solve_sos(prog, loose);
}

// Minimal gamma with gamma - [Vdot - rho_dot + mu (rho - Vbar) + ell window]
// SOS; mu and ell are decision polynomials unless supplied fixed.
struct ExactMargin {
  double margin = 0.0;
  SosStatus status = SosStatus::kNumericalFailure;
  Polynomial mu;
  Polynomial ell;
};

ExactMargin exact_margin(const IntervalData& d, const FunnelOptions& opts,
                         const Polynomial* fixed_mu, const Polynomial* fixed_ell) {
  SosProgram prog;
  const int gm = prog.add_decision();

  DecisionPoly interior(d.Vdot - d.rho_dot);
  DecisionPoly mu_dp;
  if (fixed_mu) {
    interior += DecisionPoly((d.rho - d.Vbar) * (*fixed_mu));
  } else {
    mu_dp = decision_poly(
        prog, d.vars,
        monomial_basis_list(d.vars, opts.mu_degree_t + opts.mu_degree_x, opts.mu_degree_t,
                            opts.mu_degree_x));
    interior += (d.rho - d.Vbar) * mu_dp;
  }

  DecisionPoly ell_dp;
  if (fixed_ell) {
    interior += DecisionPoly(d.window * (*fixed_ell));
  } else {
    // The window multiplier absorbs the even-degree closure in local time and
    // in total degree (trajectory-fit pieces can lose leading terms).
    const int ds = interior.degree_in(d.vars.time_index());
    int ell_t = std::max(0, ds + ds % 2 - 2);
    const int di = interior.total_degree();
    while (ell_t + opts.mu_degree_x + 2 < di + di % 2) ell_t += 2;
    ell_dp = decision_poly(
        prog, d.vars, monomial_basis_list(d.vars, ell_t + opts.mu_degree_x, ell_t, opts.mu_degree_x));
    interior += d.window * ell_dp;
    prog.sos_constraints.push_back(ell_dp);
  }

  DecisionPoly bracket = -interior;
  bracket.add_term(Monomial(d.vars.size()), LinExpr::var(gm));
  sanitize_bracket(bracket, prog, "exact certificate expression");
  prog.sos_constraints.push_back(std::move(bracket));
  prog.objective = LinExpr::var(gm);
  prog.sense = Sense::kMinimize;

  const SosSolution sol = solve_margin(prog, opts.sdp);
  ExactMargin out;
  out.status = sol.status;
  if (sol.status == SosStatus::kOptimal) {
    out.margin = sol.decision(gm);
    out.mu = fixed_mu ? *fixed_mu : mu_dp.at(sol.decision);
    out.ell = fixed_ell ? *fixed_ell : ell_dp.at(sol.decision);
  } else {
    out.margin = qnan();
    if (fixed_mu) out.mu = *fixed_mu;
    if (fixed_ell) out.ell = *fixed_ell;
  }
  return out;
}

// Same margin program at one fixed local time, over the states alone.
struct SampleMargin {
  double margin = 0.0;
  SosStatus status = SosStatus::kNumericalFailure;
  Polynomial mu;
};

SampleMargin sample_margin(const IntervalData& d, double s, const FunnelOptions& opts,
                           const Polynomial* fixed_mu) {
  const int tv = d.vars.time_index();
  const VarSet xv{false, d.vars.n_states, 0};
  const Polynomial vdot = d.Vdot.partial_eval(tv, s).drop_time();
  const Polynomial rho_dot = d.rho_dot.partial_eval(tv, s).drop_time();
  const Polynomial gap =
      d.rho.partial_eval(tv, s).drop_time() - d.Vbar.partial_eval(tv, s).drop_time();

  SosProgram prog;
  const int gm = prog.add_decision();
  DecisionPoly interior(vdot - rho_dot);
  DecisionPoly mu_dp;
  if (fixed_mu) {
    interior += DecisionPoly(gap * (*fixed_mu));
  } else {
    mu_dp = decision_poly(prog, xv, monomial_basis_list(xv, opts.mu_degree_x));
    interior += gap * mu_dp;
  }

  DecisionPoly bracket = -interior;
  bracket.add_term(Monomial(xv.size()), LinExpr::var(gm));
  sanitize_bracket(bracket, prog, "sampled certificate expression");
  prog.sos_constraints.push_back(std::move(bracket));
  prog.objective = LinExpr::var(gm);
  prog.sense = Sense::kMinimize;

  const SosSolution sol = solve_margin(prog, opts.sdp);
  SampleMargin out;
  out.status = sol.status;
  if (sol.status == SosStatus::kOptimal) {
    out.margin = sol.decision(gm);
    out.mu = fixed_mu ? *fixed_mu : mu_dp.at(sol.decision);
  } else {
    out.margin = qnan();
    if (fixed_mu) out.mu = *fixed_mu;
  }
  return out;
}

std::vector<IntervalCertificate> run_multiplier(const LyapunovCandidate& cand,
                                                const SystemDynamics& dynamics,
                                                FunnelMode mode, const FunnelOptions& opts) {
  return mode == FunnelMode::kExact ? multiplier_step_exact(cand, dynamics, opts)
                                    : multiplier_step_sampled(cand, dynamics, opts);
}

double total_seconds(const std::vector<IntervalCertificate>& certs) {
  double s = 0.0;
  for (const auto& c : certs)
    for (double v : c.seconds) s += v;
  return s;
}

// Shared schedule walk; records per-attempt multiplier timings when tracing.
FeasibleRho feasible_search(const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                            FunnelMode mode, const FunnelOptions& opts,
                            AlternationTrace* trace) {
  if (opts.c_schedule.empty())
    throw std::invalid_argument("funnel: the c schedule must not be empty");
  FeasibleRho out;
  out.candidate = cand;
  for (double c : opts.c_schedule) {
    out.c = c;
    out.candidate.rho = initial_rho(cand.knots(), c);
    out.certificates = run_multiplier(out.candidate, dynamics, mode, opts);
    if (trace) trace->multiplier_seconds.push_back(total_seconds(out.certificates));
    if (all_certified(out.certificates)) {
      out.found = true;
      break;
    }
  }
  return out;
}

// 1 - (x - c)' P (x - c) over the state variables.
Polynomial inside_quadratic(const VarSet& xv, const Eigen::MatrixXd& P,
                            const Eigen::VectorXd& c) {
  const int n = static_cast<int>(c.size());
  Polynomial q = Polynomial::constant(xv, 1.0 - c.dot(P * c));
  const Eigen::VectorXd pc = P * c;
  for (int r = 0; r < n; ++r) {
    Monomial lin(xv.size());
    lin.exp[xv.state_index(r)] = 1;
    q.add_term(lin, 2.0 * pc(r));
    for (int c2 = r; c2 < n; ++c2) {
      Monomial quad(xv.size());
      quad.exp[xv.state_index(r)] += 1;
      quad.exp[xv.state_index(c2)] += 1;
      q.add_term(quad, (r == c2 ? -1.0 : -2.0) * P(r, c2));
    }
  }
  return q;
}

}  // namespace

SolverOptions default_funnel_solver_options() {
  SolverOptions opts;
  opts.feas_tol = 1e-7;
  opts.gap_tol = 1e-7;
  return opts;
}

bool GoalRegion::contains(const Eigen::VectorXd& x, double slack) const {
  const Eigen::VectorXd e = x - center;
  return e.dot(P * e) <= 1.0 + slack;
}

Eigen::MatrixXd inner_ellipse(const GoalRegion& goal, const Eigen::VectorXd& x_f,
                              const SolverOptions& opts) {
  const int n = static_cast<int>(goal.center.size());
  if (n == 0 || goal.P.rows() != n || goal.P.cols() != n || x_f.size() != n)
    throw std::invalid_argument("inner_ellipse: dimension mismatch");
  if (min_eigenvalue(goal.P) <= 0.0)
    throw std::invalid_argument("inner_ellipse: goal matrix must be positive definite");
  const Eigen::VectorXd d = x_f - goal.center;
  const double r2 = d.dot(goal.P * d);
  if (r2 >= 1.0 - 1e-9)
    throw std::invalid_argument("inner_ellipse: the center must lie strictly inside the goal");

  const VarSet xv{false, n, 0};
  const Polynomial qg = inside_quadratic(xv, goal.P, goal.center);

  // S-procedure containment probe: the candidate of scale theta fits inside
  // the goal iff  max t  s.t.  qg - lambda qf - t in SOS, lambda >= 0  has a
  // nonnegative optimum (quadratics: Gram PSD-ness is exact).
  const auto fits = [&](double theta) {
    const Polynomial qf = inside_quadratic(xv, Eigen::MatrixXd(goal.P / theta), x_f);
    SosProgram prog;
    const int lam = prog.add_decision();
    const int tt = prog.add_decision();
    DecisionPoly expr(qg);
    for (const auto& [m, c] : qf.terms()) expr.add_term(m, LinExpr::var(lam, -c));
    expr.add_term(Monomial(xv.size()), LinExpr::var(tt, -1.0));
    prog.sos_constraints.push_back(std::move(expr));
    prog.linear_constraints.push_back({LinExpr::var(lam), false});
    prog.objective = LinExpr::var(tt);
    prog.sense = Sense::kMaximize;
    const SosSolution sol = solve_sos(prog, opts);
    return sol.status == SosStatus::kOptimal && sol.decision(tt) >= -kProbeSlack;
  };

  if (fits(1.0)) return goal.P;
  // Seed strictly below the same-shape bound (1 - sqrt(r2))^2, then bisect.
  double lo = 0.25 * (1.0 - std::sqrt(r2)) * (1.0 - std::sqrt(r2));
  int shrink = 0;
  while (!fits(lo)) {
    lo *= 0.25;
    if (++shrink > 8)
      throw std::runtime_error("inner_ellipse: containment probe failed near zero scale");
  }
  double hi = 1.0;
  for (int it = 0; it < 60 && hi - lo > 1e-11; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fits(mid) ? lo : hi) = mid;
  }
  return goal.P / lo;
}

Eigen::VectorXd LyapunovCandidate::center(double t) const {
  const std::vector<double> v = xhat0.eval(t);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd LyapunovCandidate::metric(double t) const {
  const std::vector<double> v = P0.eval(t);
  return Eigen::Map<
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), n,
                                                                                    n);
}

double LyapunovCandidate::V(double t, const Eigen::VectorXd& x) const {
  const Eigen::VectorXd e = x - center(t);
  return e.dot(metric(t) * e) / rho.eval(t);
}

void check_candidate(const LyapunovCandidate& cand) {
  if (cand.n <= 0) throw std::invalid_argument("candidate: empty state dimension");
  if (cand.xhat0.rows() != cand.n || cand.xhat0.cols() != 1)
    throw std::invalid_argument("candidate: trajectory must be an n-by-1 matrix");
  if (cand.P0.rows() != cand.n || cand.P0.cols() != cand.n || !cand.P0.symmetric())
    throw std::invalid_argument("candidate: metric must be symmetric n-by-n");
  if (cand.xhat0.knots() != cand.P0.knots() || cand.rho.knots() != cand.P0.knots())
    throw std::invalid_argument("candidate: knot grids disagree");

  if (std::abs(cand.rho.eval(cand.tf()) - 1.0) > 1e-9)
    throw std::invalid_argument("candidate: rho(tf) must equal 1");
  double rho_max = 0.0;
  for (int i = 0; i < cand.rho.n_pieces(); ++i)
    for (int j = 0; j <= 10; ++j) {
      const double t = cand.knots()[i] + cand.rho.dt(i) * (j / 10.0);
      const double v = cand.rho.eval(t);
      if (!(v > 0.0))
        throw std::invalid_argument("candidate: rho must stay positive (t = " +
                                    std::to_string(t) + ")");
      rho_max = std::max(rho_max, v);
    }
  if (cand.rho.max_knot_jump() > 1e-7 * std::max(1.0, rho_max))
    throw std::invalid_argument("candidate: rho must be continuous across knots");

  for (double t : cand.knots())
    if (min_eigenvalue(cand.metric(t)) <= 0.0)
      throw std::invalid_argument("candidate: metric not positive definite at t = " +
                                  std::to_string(t));

  if (cand.Pf.size() > 0) {
    if (cand.Pf.rows() != cand.n || cand.Pf.cols() != cand.n)
      throw std::invalid_argument("candidate: terminal target dimension mismatch");
    const double slack = min_eigenvalue(cand.metric(cand.tf()) - cand.Pf);
    if (slack < -kPsdSlack)
      throw std::invalid_argument(
          "candidate: terminal metric misses the containment target by " +
          std::to_string(-slack));
  }
}

LyapunovCandidate build_candidate(const SampledPath& nominal, const MatrixPath& P,
                                  std::vector<double> knots, const Eigen::MatrixXd& Pf) {
  if (knots.size() < 2)
    throw std::invalid_argument("build_candidate: at least two knots required");
  if (!std::is_sorted(knots.begin(), knots.end()))
    throw std::invalid_argument("build_candidate: knots must be sorted");
  const int n = nominal.dim();
  if (P.n() != n || Pf.rows() != n || Pf.cols() != n)
    throw std::invalid_argument("build_candidate: dimension mismatch");
  const double span = knots.back() - knots.front();
  if (!(span > 0.0)) throw std::invalid_argument("build_candidate: empty time span");

  // Merge degenerate intervals so every piece has usable width.
  const double width_tol = 1e-9 * span;
  std::vector<double> merged{knots.front()};
  for (size_t i = 1; i < knots.size(); ++i)
    if (knots[i] - merged.back() >= width_tol) merged.push_back(knots[i]);
  if (merged.back() != knots.back()) merged.back() = knots.back();
  if (merged.size() < 2)
    throw std::invalid_argument("build_candidate: knot grid collapsed to a point");

  LyapunovCandidate cand;
  cand.n = n;
  cand.xhat0 = fit_path(nominal, merged, FitType::kCubicHermite);
  cand.P0 = fit_matrix(P, merged, FitType::kLinear);
  cand.rho = initial_rho(merged, 0.0);
  cand.Pf = Pf;

  for (double t : merged) {
    const double lm = min_eigenvalue(cand.metric(t));
    if (lm <= 0.0)
      throw std::invalid_argument("build_candidate: metric not positive definite at t = " +
                                  std::to_string(t) + " (min eigenvalue " +
                                  std::to_string(lm) + ")");
  }
  const double slack = min_eigenvalue(cand.metric(merged.back()) - Pf);
  if (slack < -kPsdSlack)
    throw std::invalid_argument("build_candidate: terminal metric misses the containment "
                                "target by " +
                                std::to_string(-slack));
  return cand;
}

PiecewisePolynomial initial_rho(const std::vector<double>& knots, double c) {
  if (knots.size() < 2)
    throw std::invalid_argument("initial_rho: at least two knots required");
  if (!(c >= 0.0)) throw std::invalid_argument("initial_rho: c must be nonnegative");
  const double t0 = knots.front(), tf = knots.back();
  std::vector<double> vals(knots.size());
  for (size_t k = 0; k < knots.size(); ++k)
    vals[k] = std::exp(-c * (tf - knots[k]) / (tf - t0));
  vals.back() = 1.0;
  return linear_interp(knots, vals);
}

const char* to_string(FunnelMode mode) {
  return mode == FunnelMode::kExact ? "exact" : "sampled";
}

bool IntervalCertificate::certified() const {
  if (margins.empty() || statuses.size() != margins.size()) return false;
  for (size_t i = 0; i < margins.size(); ++i)
    if (statuses[i] != SosStatus::kOptimal || !(margins[i] < 0.0)) return false;
  return true;
}

double IntervalCertificate::worst_margin() const {
  if (margins.empty()) return qnan();
  double w = -std::numeric_limits<double>::infinity();
  for (double m : margins) {
    if (std::isnan(m)) return m;
    w = std::max(w, m);
  }
  return w;
}

bool all_certified(const std::vector<IntervalCertificate>& certs) {
  if (certs.empty()) return false;
  for (const auto& c : certs)
    if (!c.certified()) return false;
  return true;
}

std::vector<IntervalCertificate> multiplier_step_exact(const LyapunovCandidate& cand,
                                                       const SystemDynamics& dynamics,
                                                       const FunnelOptions& opts) {
  require_match(cand, dynamics);
  std::vector<IntervalCertificate> out;
  const int n_int = static_cast<int>(cand.knots().size()) - 1;
  out.reserve(n_int);
  for (int i = 0; i < n_int; ++i) {
    const auto start = Clock::now();
    const IntervalData d = make_interval(cand, dynamics, i);
    const ExactMargin r = exact_margin(d, opts, nullptr, nullptr);
    IntervalCertificate cert;
    cert.interval = i;
    cert.mu = {r.mu};
    cert.ell = {r.ell};
    cert.margins = {r.margin};
    cert.statuses = {r.status};
    cert.seconds = {elapsed(start)};
    out.push_back(std::move(cert));
  }
  return out;
}

std::vector<IntervalCertificate> multiplier_step_sampled(const LyapunovCandidate& cand,
                                                         const SystemDynamics& dynamics,
                                                         const FunnelOptions& opts) {
  require_match(cand, dynamics);
  const std::vector<double> grid = sample_grid(opts.samples_per_interval);
  std::vector<IntervalCertificate> out;
  const int n_int = static_cast<int>(cand.knots().size()) - 1;
  out.reserve(n_int);
  for (int i = 0; i < n_int; ++i) {
    const IntervalData d = make_interval(cand, dynamics, i);
    IntervalCertificate cert;
    cert.interval = i;
    for (double s : grid) {
      const auto start = Clock::now();
      const SampleMargin r = sample_margin(d, s, opts, nullptr);
      cert.sample_times.push_back(d.t0 + d.dt * s);
      cert.mu.push_back(r.mu);
      cert.margins.push_back(r.margin);
      cert.statuses.push_back(r.status);
      cert.seconds.push_back(elapsed(start));
    }
    out.push_back(std::move(cert));
  }
  return out;
}

std::vector<IntervalCertificate> recheck_margins(const LyapunovCandidate& cand,
                                                 const SystemDynamics& dynamics,
                                                 const std::vector<IntervalCertificate>& certs,
                                                 const FunnelOptions& opts) {
  require_match(cand, dynamics);
  // With the multipliers pinned the margin optimum sits on the cone boundary
  // and has a very thin interior, so solve to the verification tolerance
  // instead of the optimization tolerance.
  FunnelOptions ropts = opts;
  ropts.sdp.feas_tol = std::max(ropts.sdp.feas_tol, kVerifyTol);
  const int n_int = static_cast<int>(cand.knots().size()) - 1;
  std::vector<IntervalCertificate> out;
  out.reserve(certs.size());
  for (const auto& cert : certs) {
    if (cert.interval < 0 || cert.interval >= n_int)
      throw std::invalid_argument("recheck_margins: certificate interval out of range");
    const IntervalData d = make_interval(cand, dynamics, cert.interval);
    IntervalCertificate next = cert;
    next.margins.clear();
    next.statuses.clear();
    next.seconds.clear();
    if (cert.sample_times.empty()) {
      if (cert.mu.size() != 1 || cert.ell.size() != 1)
        throw std::invalid_argument("recheck_margins: exact certificate missing multipliers");
      const auto start = Clock::now();
      const ExactMargin r = exact_margin(d, ropts, &cert.mu[0], &cert.ell[0]);
      next.margins = {r.margin};
      next.statuses = {r.status};
      next.seconds = {elapsed(start)};
    } else {
      if (cert.mu.size() != cert.sample_times.size())
        throw std::invalid_argument("recheck_margins: one multiplier per sample required");
      for (size_t j = 0; j < cert.sample_times.size(); ++j) {
        const double s = (cert.sample_times[j] - d.t0) / d.dt;
        if (s < -1e-9 || s > 1.0 + 1e-9)
          throw std::invalid_argument("recheck_margins: sample time outside its interval");
        const auto start = Clock::now();
        const SampleMargin r = sample_margin(d, std::clamp(s, 0.0, 1.0), ropts, &cert.mu[j]);
        next.margins.push_back(r.margin);
        next.statuses.push_back(r.status);
        next.seconds.push_back(elapsed(start));
      }
    }
    out.push_back(std::move(next));
  }
  return out;
}

namespace {

// Shared scaffolding of both rho steps: decision scalars are the rho knot
// values except the last, which is pinned to 1.
struct RhoStep {
  SosProgram prog;
  int n_int = 0;

  explicit RhoStep(const std::vector<double>& knots)
      : n_int(static_cast<int>(knots.size()) - 1) {
    for (int k = 0; k < n_int; ++k) prog.add_decision();
    for (int k = 0; k < n_int; ++k)
      prog.linear_constraints.push_back({LinExpr::var(k) - LinExpr(kRhoFloor), false});
    LinExpr h;
    for (int i = 0; i < n_int; ++i)
      h += (value(i) + value(i + 1)) * (0.5 * (knots[i + 1] - knots[i]));
    prog.objective = h;
    prog.sense = Sense::kMaximize;
  }

  LinExpr value(int k) const { return k < n_int ? LinExpr::var(k) : LinExpr(1.0); }

  VStepResult finish(const LyapunovCandidate& cand, const FunnelOptions& opts) {
    const SosSolution sol = solve_sos(prog, opts.sdp);
    VStepResult out;
    out.status = sol.status;
    if (sol.status != SosStatus::kOptimal) return out;
    std::vector<double> vals(n_int + 1, 1.0);
    for (int k = 0; k < n_int; ++k) vals[k] = sol.decision(k);
    out.candidate = cand;
    out.candidate.rho = linear_interp(cand.knots(), vals);
    check_candidate(out.candidate);
    out.ok = true;
    return out;
  }
};

void require_exact_cert(const IntervalCertificate& cert, int i) {
  if (cert.interval != i || !cert.sample_times.empty() || cert.mu.size() != 1 ||
      cert.ell.size() != 1)
    throw std::invalid_argument(
        "v_step_exact: exact-mode certificates in interval order required");
}

void require_sampled_cert(const IntervalCertificate& cert, int i) {
  if (cert.interval != i || cert.sample_times.empty() ||
      cert.mu.size() != cert.sample_times.size())
    throw std::invalid_argument(
        "v_step_sampled: sampled-mode certificates in interval order required");
}

}  // namespace

VStepResult v_step_exact(const std::vector<IntervalCertificate>& certs,
                         const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                         const FunnelOptions& opts) {
  require_match(cand, dynamics);
  const auto& knots = cand.knots();
  RhoStep step(knots);
  if (static_cast<int>(certs.size()) != step.n_int)
    throw std::invalid_argument("v_step_exact: one certificate per interval required");

  for (int i = 0; i < step.n_int; ++i) {
    require_exact_cert(certs[i], i);
    const IntervalData d = make_interval(cand, dynamics, i);
    const Monomial one(d.vars.size());
    Monomial s1(d.vars.size());
    s1.exp[0] = 1;

    DecisionPoly rho_dp(d.vars);
    rho_dp.add_term(one, step.value(i));
    rho_dp.add_term(s1, step.value(i + 1) - step.value(i));

    // -eps - [Vdot - rho_dot + mu (rho - Vbar) + ell window] in SOS form; mu
    // stays fixed, but the window multiplier ell is re-decided so the
    // certificate only binds on the interval rather than over all real time.
    // The expression is scaled by dt (preserving the cone) so the rho-slope
    // rows stay O(1) even on very short intervals.
    DecisionPoly bracket(d.vars);
    bracket -= DecisionPoly(d.Vdot * d.dt +
                            Polynomial::constant(d.vars, opts.epsilon * d.dt + kStepPad));
    bracket.add_term(one, step.value(i + 1) - step.value(i));
    bracket -= (certs[i].mu[0] * d.dt) * (rho_dp - DecisionPoly(d.Vbar));

    const int ds = bracket.degree_in(d.vars.time_index());
    int ell_t = std::max(0, ds + ds % 2 - 2);
    const int db = bracket.total_degree();
    while (ell_t + opts.mu_degree_x + 2 < db + db % 2) ell_t += 2;
    DecisionPoly ell_dp = decision_poly(
        step.prog, d.vars,
        monomial_basis_list(d.vars, ell_t + opts.mu_degree_x, ell_t, opts.mu_degree_x));
    bracket -= d.window * ell_dp;
    step.prog.sos_constraints.push_back(ell_dp);
    sanitize_bracket(bracket, step.prog, "rho-step certificate expression");
    step.prog.sos_constraints.push_back(std::move(bracket));
  }
  return step.finish(cand, opts);
}

VStepResult v_step_sampled(const std::vector<IntervalCertificate>& certs,
                           const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                           const FunnelOptions& opts) {
  require_match(cand, dynamics);
  const auto& knots = cand.knots();
  RhoStep step(knots);
  if (static_cast<int>(certs.size()) != step.n_int)
    throw std::invalid_argument("v_step_sampled: one certificate per interval required");

  const VarSet xv{false, cand.n, 0};
  const Monomial one(xv.size());
  const int tv = VarSet{true, cand.n, 0}.time_index();
  for (int i = 0; i < step.n_int; ++i) {
    require_sampled_cert(certs[i], i);
    const IntervalData d = make_interval(cand, dynamics, i);
    for (size_t j = 0; j < certs[i].sample_times.size(); ++j) {
      const double s = std::clamp((certs[i].sample_times[j] - d.t0) / d.dt, 0.0, 1.0);
      const Polynomial vdot = d.Vdot.partial_eval(tv, s).drop_time();
      const Polynomial vbar = d.Vbar.partial_eval(tv, s).drop_time();

      DecisionPoly gap(xv);  // rho(s_j) - Vbar(s_j), knot values as decisions
      gap.add_term(one, step.value(i) * (1.0 - s) + step.value(i + 1) * s);
      gap -= DecisionPoly(vbar);

      // Scaled and padded like the exact step, for the same reasons.
      DecisionPoly bracket(xv);
      bracket -= DecisionPoly(vdot * d.dt +
                              Polynomial::constant(xv, opts.epsilon * d.dt + kStepPad));
      bracket.add_term(one, step.value(i + 1) - step.value(i));
      bracket -= (certs[i].mu[j] * d.dt) * gap;
      sanitize_bracket(bracket, step.prog, "rho-step certificate expression");
      step.prog.sos_constraints.push_back(std::move(bracket));
    }
  }
  return step.finish(cand, opts);
}

FeasibleRho find_feasible_rho(const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                              FunnelMode mode, const FunnelOptions& opts) {
  require_match(cand, dynamics);
  return feasible_search(cand, dynamics, mode, opts, nullptr);
}

Funnel optimize_funnel(const SystemDynamics& dynamics, const LyapunovCandidate& cand,
                       FunnelMode mode, const FunnelOptions& opts, AlternationTrace* trace) {
  require_match(cand, dynamics);
  check_candidate(cand);
  if (trace) *trace = AlternationTrace{};

  Funnel out;
  out.mode = mode;
  out.epsilon = opts.epsilon;

  FeasibleRho fr = feasible_search(cand, dynamics, mode, opts, trace);
  out.candidate = std::move(fr.candidate);
  out.certificates = std::move(fr.certificates);
  out.h = h_objective(out.candidate.rho);
  if (!fr.found) return out;  // verified stays false; margins show the failure
  out.verified = true;
  if (trace) {
    trace->feasibility_c = fr.c;
    trace->h_values.push_back(out.h);
    trace->volumes.push_back(funnel_volume(out.candidate));
  }

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const auto vstart = Clock::now();
    const VStepResult vs = mode == FunnelMode::kExact
                               ? v_step_exact(out.certificates, out.candidate, dynamics, opts)
                               : v_step_sampled(out.certificates, out.candidate, dynamics, opts);
    if (trace) trace->v_step_seconds.push_back(elapsed(vstart));
    if (!vs.ok) break;  // margins sit inside the epsilon band; keep the iterate
    const double h_new = h_objective(vs.candidate.rho);
    if (h_new < out.h - 1e-8) break;  // never trade away certified tube mass
    auto certs = run_multiplier(vs.candidate, dynamics, mode, opts);
    if (trace) trace->multiplier_seconds.push_back(total_seconds(certs));
    if (!all_certified(certs)) break;
    out.candidate = vs.candidate;
    out.certificates = std::move(certs);
    const double gain = h_new - out.h;
    out.h = h_new;
    if (trace) {
      trace->h_values.push_back(h_new);
      trace->volumes.push_back(funnel_volume(out.candidate));
      ++trace->iterations;
    }
    if (gain <= opts.tol * std::max(std::abs(out.h), 1e-12)) break;
  }
  return out;
}

double h_objective(const PiecewisePolynomial& rho) { return rho.integrate(); }

double funnel_volume(const LyapunovCandidate& cand) {
  const auto radius = [&](double t) {
    const Eigen::MatrixXd P = cand.metric(t);
    const Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("funnel_volume: metric must stay positive definite");
    double logdet = 0.0;
    for (int k = 0; k < cand.n; ++k) logdet += 2.0 * std::log(llt.matrixL()(k, k));
    const double r = cand.rho.eval(t);
    if (!(r > 0.0)) throw std::runtime_error("funnel_volume: rho must stay positive");
    return std::exp(0.5 * (cand.n * std::log(r) - logdet));
  };

  // Composite Simpson on 20 subintervals per knot interval.
  const auto& knots = cand.knots();
  double total = 0.0;
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    const double h = (knots[i + 1] - knots[i]) / 20.0;
    double sum = radius(knots[i]) + radius(knots[i + 1]);
    for (int k = 1; k < 20; ++k) sum += (k % 2 ? 4.0 : 2.0) * radius(knots[i] + k * h);
    total += sum * h / 3.0;
  }
  return total;
}

Ellipsoid level_set_at(const LyapunovCandidate& cand, double t) {
  const double span = cand.tf() - cand.t0();
  if (t < cand.t0() - 1e-12 * span || t > cand.tf() + 1e-12 * span)
    throw std::out_of_range("level_set_at: time outside the funnel span");
  const double tc = std::clamp(t, cand.t0(), cand.tf());
  const double r = cand.rho.eval(tc);
  if (!(r > 0.0)) throw std::runtime_error("level_set_at: rho must be positive");
  return Ellipsoid{cand.center(tc), cand.metric(tc) / r};
}

}  // namespace funnelcert
