#pragma once
// Invariant-funnel certification around nominal trajectories.  A candidate
// V(t,x) = |x - xhat0(t)|^2_{P0(t)} / rho(t) is certified on each knot
// interval by sum-of-squares programs: exactly in time (multipliers over the
// local time coordinate and the states, with an interval-window multiplier)
// or at sampled times (per-sample programs over the states alone).  A
// bilinear alternation -- multiplier step, then a rho-improving step --
// grows the certified tube while keeping the terminal slice inside the goal.

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "funnelcert/odeint.hpp"
#include "funnelcert/poly.hpp"
#include "funnelcert/sos.hpp"
#include "funnelcert/tvlqr.hpp"

namespace funnelcert {

// Ellipsoidal goal region {x : (x - center)' P (x - center) <= 1}.
struct GoalRegion {
  Eigen::VectorXd center;
  Eigen::MatrixXd P;

  bool contains(const Eigen::VectorXd& x, double slack = 0.0) const;
};

// One funnel slice {x : (x - center)' P (x - center) <= 1}.
struct Ellipsoid {
  Eigen::VectorXd center;
  Eigen::MatrixXd P;
};

// Solver options used by default for every certification subproblem: the
// margins the pipeline asserts are >= 1e-6, so 1e-7 KKT accuracy is an order
// tighter while staying above the attainable floor of double precision.
SolverOptions default_funnel_solver_options();

// Largest ellipsoid of the goal's shape centered at x_f that fits inside the
// goal: bisection over the scale with an S-procedure containment SDP as the
// feasibility probe.  Returns the matrix P_f of {x : |x - x_f|^2_{P_f} <= 1}.
// Throws std::invalid_argument when x_f is not strictly inside the goal.
Eigen::MatrixXd inner_ellipse(const GoalRegion& goal, const Eigen::VectorXd& x_f,
                              const SolverOptions& opts = default_funnel_solver_options());

// Time-varying quadratic Lyapunov candidate on a shared knot grid:
// xhat0 cubic pieces, P0 symmetric linear pieces (PD at the knots), rho
// continuous, positive, with rho(tf) = 1.
struct LyapunovCandidate {
  PolyMatrix xhat0;          // n-by-1
  PolyMatrix P0;             // n-by-n, symmetric
  PiecewisePolynomial rho;   // scalar, time-only
  Eigen::MatrixXd Pf;        // terminal containment target: P0(tf) >= Pf
  int n = 0;

  const std::vector<double>& knots() const { return P0.knots(); }
  double t0() const { return knots().front(); }
  double tf() const { return knots().back(); }
  Eigen::VectorXd center(double t) const;
  Eigen::MatrixXd metric(double t) const;
  // V(t, x) = |x - center(t)|^2_{P0(t)} / rho(t).
  double V(double t, const Eigen::VectorXd& x) const;
};

// Throws std::invalid_argument when a candidate invariant fails: knot grids
// disagree, rho(tf) != 1, rho discontinuous or nonpositive (checked on a 10x
// oversampled grid), or P0 not PD at a knot.
void check_candidate(const LyapunovCandidate& cand);

// Fits the candidate from integrator output (cubic Hermite trajectory,
// linear matrix pieces, rho == 1 placeholder) after merging degenerate
// intervals (width < 1e-9 of the span).  Throws when the terminal matrix
// fails P0(tf) >= Pf (message carries the offending eigenvalue) or P0 loses
// definiteness at a knot.
LyapunovCandidate build_candidate(const SampledPath& nominal, const MatrixPath& P,
                                  std::vector<double> knots, const Eigen::MatrixXd& Pf);

// Piecewise-linear interpolation of exp(-c (tf - t) / (tf - t0)) at the
// knots; rho(tf) = 1 exactly.  c must be nonnegative.
PiecewisePolynomial initial_rho(const std::vector<double>& knots, double c);

enum class FunnelMode { kExact, kSampled };
const char* to_string(FunnelMode mode);

struct FunnelOptions {
  double epsilon = 1e-6;          // strict-decrease slack in the rho step
  int mu_degree_x = 2;            // state degree of the level-set multiplier
  int mu_degree_t = 2;            // its local-time degree (exact mode)
  int samples_per_interval = 10;  // sampled mode, endpoints included
  std::vector<double> c_schedule{0.0, 1.0, 2.0, 4.0};
  double tol = 1e-3;              // relative h improvement stop
  int max_iters = 10;             // alternation cap
  SolverOptions sdp = default_funnel_solver_options();
};

// Certification result for one knot interval.  Exact mode carries one
// multiplier pair over (local time, states) and one margin; sampled mode
// carries one state-space multiplier and margin per sample time.
struct IntervalCertificate {
  int interval = -1;
  std::vector<double> sample_times;  // global times; empty in exact mode
  std::vector<Polynomial> mu;
  std::vector<Polynomial> ell;       // window multiplier; exact mode only
  std::vector<double> margins;
  std::vector<SosStatus> statuses;
  std::vector<double> seconds;       // wall clock per subproblem

  bool certified() const;
  double worst_margin() const;
};

bool all_certified(const std::vector<IntervalCertificate>& certs);

// Per-interval margin minimization with decision multipliers; an interval is
// certified when its margin is negative.  Subproblems are independent (pure
// functions over immutable inputs) and aggregated in interval order.
std::vector<IntervalCertificate> multiplier_step_exact(const LyapunovCandidate& cand,
                                                       const SystemDynamics& dynamics,
                                                       const FunnelOptions& opts = {});
std::vector<IntervalCertificate> multiplier_step_sampled(const LyapunovCandidate& cand,
                                                         const SystemDynamics& dynamics,
                                                         const FunnelOptions& opts = {});

// Recomputes each margin with the stored multipliers held fixed (only the
// slack and the Gram are unknowns) -- certificate re-verification without
// re-optimization.  The mode is inferred from the certificate shape.
std::vector<IntervalCertificate> recheck_margins(const LyapunovCandidate& cand,
                                                 const SystemDynamics& dynamics,
                                                 const std::vector<IntervalCertificate>& certs,
                                                 const FunnelOptions& opts = {});

struct VStepResult {
  bool ok = false;
  SosStatus status = SosStatus::kNumericalFailure;
  LyapunovCandidate candidate;  // meaningful only when ok
};

// One global solve maximizing h(rho) = integral of rho with the multipliers
// fixed, subject to the certified-decrease condition with slack epsilon on
// every interval, rho(tf) = 1, continuity (shared knot values), and knot
// positivity.  Fails (ok = false) rather than throwing when the solver does
// not reach optimality.
VStepResult v_step_exact(const std::vector<IntervalCertificate>& certs,
                         const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                         const FunnelOptions& opts = {});
VStepResult v_step_sampled(const std::vector<IntervalCertificate>& certs,
                           const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                           const FunnelOptions& opts = {});

struct FeasibleRho {
  bool found = false;
  double c = std::numeric_limits<double>::quiet_NaN();
  LyapunovCandidate candidate;                  // carries the last attempted rho
  std::vector<IntervalCertificate> certificates;  // margins of the last attempt
};

// Walks the c schedule until the multiplier step certifies every interval;
// an exhausted schedule is reported as a result, not an exception.
FeasibleRho find_feasible_rho(const LyapunovCandidate& cand, const SystemDynamics& dynamics,
                              FunnelMode mode, const FunnelOptions& opts = {});

struct Funnel {
  LyapunovCandidate candidate;
  std::vector<IntervalCertificate> certificates;
  FunnelMode mode = FunnelMode::kExact;
  double epsilon = 0.0;
  bool verified = false;
  double h = 0.0;
};

// Per-phase progress of one optimize_funnel run, for reporting.
struct AlternationTrace {
  double feasibility_c = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> h_values;   // initializer first, then each accepted step
  std::vector<double> volumes;    // matching funnel_volume snapshots
  std::vector<double> multiplier_seconds;  // every multiplier step run
  std::vector<double> v_step_seconds;
  int iterations = 0;  // accepted rho-improving steps
};

// Full pipeline given a candidate with placeholder rho: feasibility search
// over the c schedule, then alternation until the relative h improvement
// drops below opts.tol or opts.max_iters is reached.  Every accepted iterate
// is certified by its own multiplier step; h is nondecreasing across
// accepted iterates.  Returns the last certified iterate (verified = false
// only when the initializer search fails).
Funnel optimize_funnel(const SystemDynamics& dynamics, const LyapunovCandidate& cand,
                       FunnelMode mode, const FunnelOptions& opts = {},
                       AlternationTrace* trace = nullptr);

// h(rho) = integral of rho over the span.
double h_objective(const PiecewisePolynomial& rho);

// Integral of sqrt(rho(t)^n / det P0(t)), proportional to the tube volume;
// composite Simpson quadrature on 20 subintervals per knot interval.
double funnel_volume(const LyapunovCandidate& cand);

// The funnel slice at time t: center xhat0(t), matrix P0(t) / rho(t).
// Throws std::out_of_range outside the span.
Ellipsoid level_set_at(const LyapunovCandidate& cand, double t);

}  // namespace funnelcert
