#include "funnelcert/validate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace funnelcert {
namespace {

// Splitmix-style stream derivation: sample k gets its own generator, so the
// report does not depend on evaluation order.
std::mt19937_64 stream_rng(std::uint64_t seed, int k) {
  return std::mt19937_64(seed + 0x9E3779B97F4A7C15ULL *
                                    (static_cast<std::uint64_t>(k) + 1));
}

// Portable uniform in [0, 1): the standard pins down mt19937_64 exactly, and
// this transform avoids the library-defined std::uniform_real_distribution.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller standard normal; same portability rationale.
double normal01(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Uniform direction on the unit sphere in n dimensions.
Eigen::VectorXd sphere_dir(int n, std::mt19937_64& rng) {
  Eigen::VectorXd v(n);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (int i = 0; i < n; ++i) v[i] = normal01(rng);
    norm = v.norm();
  }
  return v / norm;
}

// Maps a point on the unit sphere onto the boundary of ||x - c||^2_P = 1.
Eigen::VectorXd to_boundary(const Ellipsoid& set, const Eigen::VectorXd& u) {
  Eigen::LLT<Eigen::MatrixXd> llt(set.P);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("boundary_sample: metric is not positive definite");
  // ||x - c||^2_P = 1 with x = c + L^{-T} u and ||u|| = 1.
  return set.center + llt.matrixU().solve(u);
}

// Times at which the trajectory is held against V <= 1: a fixed number of
// points per knot interval, clipped to [tau, tf].
std::vector<double> check_times(const LyapunovCandidate& cand, double tau) {
  constexpr int kChecksPerInterval = 20;
  const auto& knots = cand.knots();
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    double lo = std::max(knots[i], tau);
    double hi = knots[i + 1];
    if (hi <= lo) continue;
    for (int k = 1; k <= kChecksPerInterval; ++k)
      out.push_back(lo + (hi - lo) * k / kChecksPerInterval);
  }
  return out;
}

FalsificationReport run_campaign(const Funnel& funnel,
                                 const SystemDynamics& dynamics,
                                 const GoalRegion& goal, int n_samples,
                                 std::uint64_t seed, bool boundary,
                                 double slack) {
  const LyapunovCandidate& cand = funnel.candidate;
  FalsificationReport report;
  report.samples = n_samples;
  report.seed = seed;
  for (int k = 0; k < n_samples; ++k) {
    std::mt19937_64 rng = stream_rng(seed, k);
    double tau = cand.t0() + uniform01(rng) * (cand.tf() - cand.t0());
    Ellipsoid level = level_set_at(cand, tau);
    Eigen::VectorXd dir = sphere_dir(cand.n(), rng);
    Eigen::VectorXd x0 = to_boundary(level, dir);
    if (!boundary) {
      // Radial scaling: V is quadratic along the ray from the center, so
      // sqrt(u) makes the V value itself uniform in (0, 1).
      double scale = std::sqrt(uniform01(rng));
      x0 = level.center + scale * (x0 - level.center);
    }
    if (auto v = check_trajectory(cand, dynamics, goal, tau, x0, slack))
      report.violations.push_back(*v);
  }
  return report;
}

}  // namespace

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kLeftFunnel: return "left-funnel";
    case ViolationKind::kMissedGoal: return "missed-goal";
    case ViolationKind::kBlowUp: return "blow-up";
  }
  return "unknown";
}

Eigen::VectorXd boundary_sample(const Ellipsoid& set, std::mt19937_64& rng) {
  return to_boundary(set, sphere_dir(static_cast<int>(set.center.size()), rng));
}

std::optional<Violation> check_trajectory(const LyapunovCandidate& cand,
                                          const SystemDynamics& dynamics,
                                          const GoalRegion& goal, double tau,
                                          const Eigen::VectorXd& x0,
                                          double slack) {
  Violation v;
  v.start_time = tau;
  v.start_state = x0;
  double tf = cand.tf();
  if (tau >= tf) {
    // Empty horizon: only goal containment is at stake.
    if (!goal.contains(x0, 1e-6)) {
      v.kind = ViolationKind::kMissedGoal;
      v.time = tau;
      return v;
    }
    return std::nullopt;
  }
  SampledPath path;
  try {
    path = integrate(dynamics.field(), tau, tf, x0);
  } catch (const std::runtime_error&) {
    v.kind = ViolationKind::kBlowUp;
    v.time = tau;
    return v;
  }
  for (double t : check_times(cand, tau)) {
    if (cand.V(t, path.eval(t)) > 1.0 + slack) {
      v.kind = ViolationKind::kLeftFunnel;
      v.time = t;
      return v;
    }
  }
  if (!goal.contains(path.eval(tf), 1e-6)) {
    v.kind = ViolationKind::kMissedGoal;
    v.time = tf;
    return v;
  }
  return std::nullopt;
}

FalsificationReport falsify(const Funnel& funnel, const SystemDynamics& dynamics,
                            const GoalRegion& goal, int n_samples,
                            std::uint64_t seed) {
  return run_campaign(funnel, dynamics, goal, n_samples, seed, false, 1e-6);
}

FalsificationReport boundary_probe(const Funnel& funnel,
                                   const SystemDynamics& dynamics,
                                   const GoalRegion& goal, int n_samples,
                                   std::uint64_t seed) {
  return run_campaign(funnel, dynamics, goal, n_samples, seed, true, 1e-4);
}

std::pair<SampledPath, SampledPath> oracle_1d_bounds(
    const SystemDynamics& dynamics, const GoalRegion& goal) {
  if (goal.center.size() != 1)
    throw std::invalid_argument("oracle_1d_bounds: system is not one-dimensional");
  double half = 1.0 / std::sqrt(goal.P(0, 0));
  double t0 = dynamics.knots().front();
  double tf = dynamics.knots().back();
  Eigen::VectorXd lo(1), hi(1);
  lo << goal.center[0] - half;
  hi << goal.center[0] + half;
  SampledPath lower = integrate(dynamics.field(), tf, t0, lo);
  SampledPath upper = integrate(dynamics.field(), tf, t0, hi);
  return {lower, upper};
}

std::string report_to_json(const FalsificationReport& report) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["samples"] = report.samples;
  j["seed"] = report.seed;
  j["violations"] = nlohmann::json::array();
  for (const auto& v : report.violations) {
    nlohmann::json jv;
    jv["start_time"] = v.start_time;
    jv["start_state"] = std::vector<double>(
        v.start_state.data(), v.start_state.data() + v.start_state.size());
    jv["kind"] = to_string(v.kind);
    jv["time"] = v.time;
    j["violations"].push_back(jv);
  }
  return j.dump(2);
}

std::string violations_to_csv(const FalsificationReport& report) {
  std::ostringstream out;
  out.precision(17);
  int n = report.violations.empty()
              ? 0
              : static_cast<int>(report.violations.front().start_state.size());
  out << "start_time,violation_time,kind";
  for (int i = 0; i < n; ++i) out << ",x" << i + 1;
  out << "\n";
  for (const auto& v : report.violations) {
    out << v.start_time << "," << v.time << "," << to_string(v.kind);
    for (int i = 0; i < v.start_state.size(); ++i) out << "," << v.start_state[i];
    out << "\n";
  }
  return out.str();
}

}  // namespace funnelcert
