#pragma once
// Solver-free stress testing of funnel certificates: Monte-Carlo falsification
// by forward simulation from sampled starts, and analytic reachability oracles
// for one-dimensional systems.  Everything here is independent of the SOS/SDP
// machinery, so a bug there cannot hide behind itself.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "funnelcert/funnel.hpp"
#include "funnelcert/odeint.hpp"
#include "funnelcert/tvlqr.hpp"

namespace funnelcert {

// How a simulated trajectory contradicted the certificate.
enum class ViolationKind {
  kLeftFunnel,  // V(t, x(t)) exceeded 1 at some check time
  kMissedGoal,  // endpoint landed outside the goal region
  kBlowUp,      // integration failed before reaching the end time
};

std::string to_string(ViolationKind kind);

// One falsifying trajectory.  Blow-up violations record the start time as the
// violation time (the integrator does not expose the collapse point).
struct Violation {
  double start_time = 0.0;
  Eigen::VectorXd start_state;
  ViolationKind kind = ViolationKind::kLeftFunnel;
  double time = 0.0;
};

// Outcome of a falsification campaign; replayable from the seed.
struct FalsificationReport {
  int samples = 0;
  std::vector<Violation> violations;
  std::uint64_t seed = 0;
};

/// Samples a point uniformly on the boundary { x : ||x - c||^2_P = 1 } by
/// mapping a unit-sphere sample through the inverse Cholesky factor of P.
/// Throws if P is not positive definite.  The returned point satisfies the
/// boundary equation to within 1e-9.
Eigen::VectorXd boundary_sample(const Ellipsoid& set, std::mt19937_64& rng);

/// Simulates the closed-loop system from (tau, x0) to the candidate's end
/// time and checks the trajectory against the certificate: V(t, x(t)) must
/// stay at or below 1 + slack on a dense grid (20 checks per knot interval),
/// and the endpoint must land in the goal region (slack 1e-6).  Returns the
/// first violation found, or nothing for a clean trajectory.
std::optional<Violation> check_trajectory(const LyapunovCandidate& cand,
                                          const SystemDynamics& dynamics,
                                          const GoalRegion& goal, double tau,
                                          const Eigen::VectorXd& x0,
                                          double slack = 1e-6);

/// Monte-Carlo falsification: n_samples trajectories, each from a uniform
/// start time and a state drawn inside the funnel level set (V uniform in
/// (0,1), direction uniform on the sphere).  Violation slack 1e-6.  Samples
/// use independent RNG streams derived from the seed, so the report is
/// reproducible and independent of evaluation order.
FalsificationReport falsify(const Funnel& funnel, const SystemDynamics& dynamics,
                            const GoalRegion& goal, int n_samples,
                            std::uint64_t seed);

/// Falsification variant that starts exactly on the funnel boundary (V = 1).
/// The certificate guarantees strict decrease only there, so tangential
/// numerical drift is expected; the funnel-exit slack is relaxed to 1e-4.
FalsificationReport boundary_probe(const Funnel& funnel,
                                   const SystemDynamics& dynamics,
                                   const GoalRegion& goal, int n_samples,
                                   std::uint64_t seed);

/// For a one-dimensional system: integrates backward from both endpoints of
/// the goal interval, returning {lower, upper} solution paths.  Any sound
/// funnel must lie between them at every time.
std::pair<SampledPath, SampledPath> oracle_1d_bounds(
    const SystemDynamics& dynamics, const GoalRegion& goal);

/// Serializes a report to JSON text (schema version 1).
std::string report_to_json(const FalsificationReport& report);

/// Serializes the violations to CSV (start_time, violation_time, kind, then
/// one column per start-state coordinate).
std::string violations_to_csv(const FalsificationReport& report);

}  // namespace funnelcert
