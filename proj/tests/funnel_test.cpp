// Funnel engine: inner ellipsoids, candidates, certification steps, and the
// full alternation, checked against closed-form linear-system oracles.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "funnelcert/funnel.hpp"
#include "funnelcert/odeint.hpp"
#include "funnelcert/poly.hpp"
#include "funnelcert/tvlqr.hpp"

using namespace funnelcert;

namespace {

std::vector<double> uniform_knots(double t0, double tf, int n) {
  std::vector<double> k(n);
  for (int i = 0; i < n; ++i) k[i] = t0 + (tf - t0) * i / (n - 1);
  k.back() = tf;
  return k;
}

// Autonomous linear dynamics xdot = A x as piecewise components.
SystemDynamics make_lti(const Eigen::MatrixXd& A, const std::vector<double>& knots) {
  const int n = static_cast<int>(A.rows());
  const VarSet vars{true, n, 0};
  std::vector<PiecewisePolynomial> comps;
  for (int k = 0; k < n; ++k) {
    Polynomial fk(vars);
    for (int j = 0; j < n; ++j)
      if (A(k, j) != 0.0) fk += Polynomial::variable(vars, vars.state_index(j)) * A(k, j);
    comps.emplace_back(knots, std::vector<Polynomial>(knots.size() - 1, fk));
  }
  return SystemDynamics(std::move(comps));
}

PiecewisePolynomial const_pp(const std::vector<double>& knots, double v) {
  const VarSet ts{true, 0, 0};
  return PiecewisePolynomial(knots,
                             std::vector<Polynomial>(knots.size() - 1, Polynomial::constant(ts, v)));
}

// Zero nominal, constant metric P, rho == 1 candidate.
LyapunovCandidate const_candidate(const std::vector<double>& knots, const Eigen::MatrixXd& P) {
  const int n = static_cast<int>(P.rows());
  std::vector<PiecewisePolynomial> xe, pe;
  for (int k = 0; k < n; ++k) xe.push_back(const_pp(knots, 0.0));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) pe.push_back(const_pp(knots, P(r, c)));
  LyapunovCandidate cand;
  cand.n = n;
  cand.xhat0 = PolyMatrix(n, 1, std::move(xe));
  cand.P0 = PolyMatrix(n, n, std::move(pe), true);
  cand.rho = const_pp(knots, 1.0);
  cand.Pf = P;
  return cand;
}

Eigen::VectorXd vec1(double v) {
  Eigen::VectorXd x(1);
  x << v;
  return x;
}

}  // namespace

TEST_CASE("goal region membership uses the quadratic form") {
  GoalRegion goal;
  goal.center = Eigen::Vector2d(1.0, -1.0);
  goal.P = Eigen::Matrix2d::Identity() * 4.0;  // radius 1/2 disk
  CHECK(goal.contains(Eigen::Vector2d(1.0, -1.0)));
  CHECK(goal.contains(Eigen::Vector2d(1.49, -1.0)));
  CHECK_FALSE(goal.contains(Eigen::Vector2d(1.51, -1.0)));
  CHECK(goal.contains(Eigen::Vector2d(1.51, -1.0), 0.1));  // slack loosens the boundary
}

TEST_CASE("inner ellipse at the goal center returns the goal matrix") {
  GoalRegion goal;
  goal.center = vec1(0.5);
  goal.P = Eigen::MatrixXd::Constant(1, 1, 4.0);  // the interval [0, 1]
  const Eigen::MatrixXd Pf = inner_ellipse(goal, vec1(0.5));
  CHECK(Pf(0, 0) == doctest::Approx(4.0).epsilon(1e-7));

  GoalRegion ball;
  ball.center = Eigen::Vector3d::Zero();
  ball.P = Eigen::Matrix3d::Identity();
  const Eigen::MatrixXd Pb = inner_ellipse(ball, Eigen::Vector3d::Zero());
  CHECK((Pb - Eigen::Matrix3d::Identity()).norm() == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("inner ellipse matches the same-shape closed form off center") {
  // For a copy of the goal shape scaled by theta and centered at distance
  // r = |x_f - g|_P, containment holds iff sqrt(theta) + r <= 1, so the
  // maximal scale is theta* = (1 - r)^2.
  GoalRegion disk;
  disk.center = Eigen::Vector2d::Zero();
  disk.P = Eigen::Matrix2d::Identity();
  const Eigen::MatrixXd Pd = inner_ellipse(disk, Eigen::Vector2d(0.5, 0.0));
  CHECK((Pd - 4.0 * Eigen::Matrix2d::Identity()).norm() < 1e-5);

  GoalRegion aniso;
  aniso.center = Eigen::Vector2d(1.0, -2.0);
  aniso.P = Eigen::Vector2d(4.0, 1.0).asDiagonal();
  const Eigen::VectorXd xf = aniso.center + Eigen::Vector2d(0.2, 0.3).matrix();
  const double r = std::sqrt(4.0 * 0.04 + 0.09);  // = 0.5
  const double theta = (1.0 - r) * (1.0 - r);
  const Eigen::MatrixXd Pa = inner_ellipse(aniso, xf);
  CHECK((Pa - Eigen::MatrixXd(aniso.P) / theta).norm() < 1e-5 * Pa.norm());
}

TEST_CASE("inner ellipse rejects bad inputs") {
  GoalRegion goal;
  goal.center = vec1(0.0);
  goal.P = Eigen::MatrixXd::Constant(1, 1, 1.0);
  CHECK_THROWS_AS((void)inner_ellipse(goal, vec1(1.5)), std::invalid_argument);   // outside
  CHECK_THROWS_AS((void)inner_ellipse(goal, vec1(1.0)), std::invalid_argument);   // boundary
  CHECK_THROWS_AS((void)inner_ellipse(goal, Eigen::Vector2d::Zero()), std::invalid_argument);
  goal.P(0, 0) = -1.0;
  CHECK_THROWS_AS((void)inner_ellipse(goal, vec1(0.0)), std::invalid_argument);
}

TEST_CASE("initial rho interpolates the exponential schedule") {
  const auto knots = uniform_knots(-1.0, 1.0, 9);
  const PiecewisePolynomial flat = initial_rho(knots, 0.0);
  for (double t = -1.0; t <= 1.0; t += 0.125)
    CHECK(flat.eval(t) == doctest::Approx(1.0).epsilon(1e-14));

  const PiecewisePolynomial rho = initial_rho(knots, 4.0);
  CHECK(rho.eval(1.0) == 1.0);
  for (double t : knots)
    CHECK(rho.eval(t) == doctest::Approx(std::exp(-4.0 * (1.0 - t) / 2.0)).epsilon(1e-12));
  // Linear in between: midpoint equals the chord average.
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    const double mid = 0.5 * (knots[i] + knots[i + 1]);
    CHECK(rho.eval(mid) ==
          doctest::Approx(0.5 * (rho.eval(knots[i]) + rho.eval(knots[i + 1]))).epsilon(1e-12));
  }
  CHECK_THROWS_AS((void)initial_rho(knots, -1.0), std::invalid_argument);
  CHECK_THROWS_AS((void)initial_rho({0.0}, 1.0), std::invalid_argument);
}

TEST_CASE("build_candidate fits the pieces and checks the terminal matrix") {
  const auto field = [](double, const Eigen::VectorXd& x) -> Eigen::VectorXd { return -x; };
  const SampledPath nominal = integrate(field, 0.0, 1.0, vec1(0.4));
  const MatrixPath S = solve_lyapunov([](double) { return Eigen::MatrixXd::Zero(1, 1); },
                                      Eigen::MatrixXd::Zero(1, 1),
                                      Eigen::MatrixXd::Identity(1, 1), 0.0, 1.0);
  const auto knots = resample_knots(S.times(), 9);

  const LyapunovCandidate cand =
      build_candidate(nominal, S, knots, Eigen::MatrixXd::Identity(1, 1));
  CHECK(cand.n == 1);
  CHECK(cand.knots().size() == 9);
  CHECK(cand.center(0.0)(0) == doctest::Approx(0.4).epsilon(1e-9));
  CHECK(cand.center(1.0)(0) == doctest::Approx(0.4 * std::exp(-1.0)).epsilon(1e-7));
  CHECK(cand.metric(0.63)(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cand.rho.eval(0.3) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cand.V(0.0, vec1(1.4)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_NOTHROW(check_candidate(cand));

  // A terminal target larger than the metric must be rejected.
  CHECK_THROWS_AS((void)build_candidate(nominal, S, knots, 2.0 * Eigen::MatrixXd::Identity(1, 1)),
                  std::invalid_argument);
}

TEST_CASE("build_candidate merges degenerate knots") {
  const auto field = [](double, const Eigen::VectorXd& x) -> Eigen::VectorXd { return -x; };
  const SampledPath nominal = integrate(field, 0.0, 1.0, vec1(0.4));
  const MatrixPath S = solve_lyapunov([](double) { return Eigen::MatrixXd::Zero(1, 1); },
                                      Eigen::MatrixXd::Zero(1, 1),
                                      Eigen::MatrixXd::Identity(1, 1), 0.0, 1.0);
  std::vector<double> knots{0.0, 0.25, 0.25 + 1e-13, 0.5, 1.0 - 1e-13, 1.0};
  const LyapunovCandidate cand =
      build_candidate(nominal, S, knots, Eigen::MatrixXd::Identity(1, 1));
  CHECK(cand.knots() == std::vector<double>{0.0, 0.25, 0.5, 1.0});
}

TEST_CASE("check_candidate rejects broken invariants") {
  const auto knots = uniform_knots(0.0, 1.0, 5);
  LyapunovCandidate good = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));
  CHECK_NOTHROW(check_candidate(good));

  LyapunovCandidate bad_end = good;
  bad_end.rho = const_pp(knots, 2.0);  // rho(tf) != 1
  CHECK_THROWS_AS(check_candidate(bad_end), std::invalid_argument);

  LyapunovCandidate bad_grid = good;
  bad_grid.rho = const_pp(uniform_knots(0.0, 1.0, 4), 1.0);
  CHECK_THROWS_AS(check_candidate(bad_grid), std::invalid_argument);

  LyapunovCandidate bad_metric = good;
  bad_metric.Pf = 3.0 * Eigen::MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(check_candidate(bad_metric), std::invalid_argument);
}

TEST_CASE("exact multiplier step certifies a contracting linear system") {
  // xdot = -x with V = x^2: on the boundary V = 1 the derivative is -2, and
  // the S-procedure is tight for quadratics, so the margin is exactly -2.
  const auto knots = uniform_knots(0.0, 1.0, 5);
  const SystemDynamics dyn = make_lti(-Eigen::MatrixXd::Identity(1, 1), knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));

  const auto certs = multiplier_step_exact(cand, dyn);
  REQUIRE(certs.size() == 4);
  CHECK(all_certified(certs));
  for (const auto& c : certs) {
    CHECK(c.sample_times.empty());
    CHECK(c.mu.size() == 1);
    CHECK(c.ell.size() == 1);
    CHECK(c.worst_margin() == doctest::Approx(-2.0).epsilon(1e-5));
    CHECK(c.seconds.at(0) > 0.0);
  }
}

TEST_CASE("exact multiplier step reports positive margins on an expanding system") {
  const auto knots = uniform_knots(0.0, 1.0, 4);
  const SystemDynamics dyn = make_lti(Eigen::MatrixXd::Identity(1, 1), knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));
  const auto certs = multiplier_step_exact(cand, dyn);
  CHECK_FALSE(all_certified(certs));
  for (const auto& c : certs) {
    CHECK(c.statuses.at(0) == SosStatus::kOptimal);
    CHECK(c.worst_margin() == doctest::Approx(2.0).epsilon(1e-5));
  }
}

TEST_CASE("sampled margins lower-bound the exact margin") {
  const auto knots = uniform_knots(0.0, 1.0, 3);
  const SystemDynamics dyn = make_lti(-Eigen::MatrixXd::Identity(1, 1), knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));

  const auto exact = multiplier_step_exact(cand, dyn);
  FunnelOptions opts;
  opts.samples_per_interval = 5;
  const auto sampled = multiplier_step_sampled(cand, dyn, opts);
  REQUIRE(sampled.size() == exact.size());
  for (size_t i = 0; i < sampled.size(); ++i) {
    REQUIRE(sampled[i].sample_times.size() == 5);
    REQUIRE(sampled[i].mu.size() == 5);
    CHECK(sampled[i].ell.empty());
    // Endpoints included: first and last samples sit on the knots.
    CHECK(sampled[i].sample_times.front() == doctest::Approx(knots[i]));
    CHECK(sampled[i].sample_times.back() == doctest::Approx(knots[i + 1]));
    for (double m : sampled[i].margins) CHECK(m <= exact[i].worst_margin() + 1e-6);
  }
  CHECK(all_certified(sampled));
}

TEST_CASE("recheck_margins reproduces the optimized margins with fixed multipliers") {
  const auto knots = uniform_knots(0.0, 1.0, 3);
  const SystemDynamics dyn = make_lti(-Eigen::MatrixXd::Identity(1, 1), knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));

  const auto exact = multiplier_step_exact(cand, dyn);
  const auto re = recheck_margins(cand, dyn, exact);
  REQUIRE(re.size() == exact.size());
  for (size_t i = 0; i < re.size(); ++i)
    CHECK(re[i].worst_margin() == doctest::Approx(exact[i].worst_margin()).epsilon(1e-5));

  FunnelOptions opts;
  opts.samples_per_interval = 4;
  const auto sampled = multiplier_step_sampled(cand, dyn, opts);
  const auto res = recheck_margins(cand, dyn, sampled, opts);
  for (size_t i = 0; i < res.size(); ++i) {
    REQUIRE(res[i].margins.size() == 4);
    for (size_t j = 0; j < 4; ++j)
      CHECK(res[i].margins[j] == doctest::Approx(sampled[i].margins[j]).epsilon(1e-5));
  }
}

TEST_CASE("rho step grows the certified tube of a contracting system") {
  const auto knots = uniform_knots(0.0, 1.0, 6);
  const SystemDynamics dyn = make_lti(-Eigen::MatrixXd::Identity(1, 1), knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));

  const auto certs = multiplier_step_exact(cand, dyn);
  REQUIRE(all_certified(certs));
  const VStepResult vs = v_step_exact(certs, cand, dyn);
  REQUIRE(vs.ok);
  CHECK(vs.status == SosStatus::kOptimal);
  // rho(tf) stays pinned; earlier knots inflate beyond 1 (backward growth).
  CHECK(vs.candidate.rho.eval(1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(vs.candidate.rho.eval(0.0) > 1.1);
  CHECK(h_objective(vs.candidate.rho) > h_objective(cand.rho) + 0.1);
  // The grown tube is still certified by a fresh multiplier step.
  CHECK(all_certified(multiplier_step_exact(vs.candidate, dyn)));

  // Mode mismatch between certificates and step is rejected.
  CHECK_THROWS_AS((void)v_step_sampled(certs, cand, dyn), std::invalid_argument);
}

TEST_CASE("find_feasible_rho walks the schedule until certification") {
  const auto knots = uniform_knots(0.0, 1.0, 11);
  const SystemDynamics unstable = make_lti(Eigen::MatrixXd::Identity(1, 1), knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));

  // xdot = +x needs the shrinking schedule: rhodot/rho must exceed 2, which
  // fails for c in {0, 1} and holds for c = 4 on this grid.
  FunnelOptions opts;
  opts.c_schedule = {0.0, 1.0, 4.0};
  const FeasibleRho fr = find_feasible_rho(cand, unstable, FunnelMode::kExact, opts);
  CHECK(fr.found);
  CHECK(fr.c == 4.0);
  CHECK(all_certified(fr.certificates));
  CHECK(fr.candidate.rho.eval(0.0) == doctest::Approx(std::exp(-4.0)).epsilon(1e-9));

  FunnelOptions hopeless;
  hopeless.c_schedule = {0.0, 1.0};
  const FeasibleRho none = find_feasible_rho(cand, unstable, FunnelMode::kExact, hopeless);
  CHECK_FALSE(none.found);
  CHECK(none.c == 1.0);
  CHECK_FALSE(all_certified(none.certificates));
}

TEST_CASE("optimize_funnel certifies and grows a 1-state tube end to end") {
  // Moving nominal: xdot = -x from 0.4, constant metric.  The optimum tube
  // for the true flow satisfies rho(t) = e^{2(1-t)}, so h is capped by
  // (e^2 - 1)/2; the alternation must get well above the initial h = 1.
  const auto field = [](double, const Eigen::VectorXd& x) -> Eigen::VectorXd { return -x; };
  const SampledPath nominal = integrate(field, 0.0, 1.0, vec1(0.4));
  const MatrixPath S = solve_lyapunov([](double) { return Eigen::MatrixXd::Zero(1, 1); },
                                      Eigen::MatrixXd::Zero(1, 1),
                                      Eigen::MatrixXd::Identity(1, 1), 0.0, 1.0);
  const auto knots = resample_knots(S.times(), 11);
  const LyapunovCandidate cand =
      build_candidate(nominal, S, knots, Eigen::MatrixXd::Identity(1, 1));
  const SystemDynamics dyn = make_lti(-Eigen::MatrixXd::Identity(1, 1), knots);

  AlternationTrace trace;
  const Funnel funnel = optimize_funnel(dyn, cand, FunnelMode::kExact, {}, &trace);
  CHECK(funnel.verified);
  CHECK(all_certified(funnel.certificates));
  CHECK(funnel.epsilon == 1e-6);
  CHECK(trace.feasibility_c == 0.0);
  CHECK(trace.iterations >= 1);
  CHECK(funnel.h > 1.5);
  CHECK(funnel.h < (std::exp(2.0) - 1.0) / 2.0 + 1e-6);
  REQUIRE(trace.h_values.size() >= 2);
  for (size_t i = 1; i < trace.h_values.size(); ++i)
    CHECK(trace.h_values[i] >= trace.h_values[i - 1] - 1e-8);
  for (size_t i = 1; i < trace.volumes.size(); ++i)
    CHECK(trace.volumes[i] >= trace.volumes[i - 1] - 1e-8);
  CHECK(trace.h_values.back() == doctest::Approx(funnel.h));
  CHECK(trace.multiplier_seconds.size() >= trace.v_step_seconds.size());

  // Invariance spot check: trajectories started on the initial boundary stay
  // inside the tube at every later knot.
  for (double dir : {-1.0, 1.0}) {
    const double x0 = funnel.candidate.center(0.0)(0) +
                      dir * std::sqrt(funnel.candidate.rho.eval(0.0));
    const SampledPath traj = integrate(field, 0.0, 1.0, vec1(x0));
    for (double t : knots)
      CHECK(funnel.candidate.V(t, traj.eval(t)) <= 1.0 + 1e-6);
  }
}

TEST_CASE("optimize_funnel sampled mode handles a two-state spiral") {
  Eigen::Matrix2d A;
  A << -1.0, 0.5, -0.5, -1.0;  // A + A' = -2I, so V = |x|^2 has margin -2
  const auto knots = uniform_knots(0.0, 1.0, 6);
  const SystemDynamics dyn = make_lti(A, knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::Matrix2d::Identity());

  FunnelOptions opts;
  opts.samples_per_interval = 5;
  AlternationTrace trace;
  const Funnel funnel = optimize_funnel(dyn, cand, FunnelMode::kSampled, opts, &trace);
  CHECK(funnel.verified);
  CHECK(funnel.mode == FunnelMode::kSampled);
  CHECK(all_certified(funnel.certificates));
  CHECK(funnel.h > 1.2);
  for (size_t i = 1; i < trace.h_values.size(); ++i)
    CHECK(trace.h_values[i] >= trace.h_values[i - 1] - 1e-8);
  for (const auto& c : funnel.certificates) {
    CHECK(c.sample_times.size() == 5);
    CHECK(c.margins.size() == 5);
  }
}

TEST_CASE("optimize_funnel reports failure when no schedule entry certifies") {
  const auto knots = uniform_knots(0.0, 1.0, 4);
  const SystemDynamics unstable = make_lti(Eigen::MatrixXd::Identity(1, 1), knots);
  const LyapunovCandidate cand = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));
  FunnelOptions opts;
  opts.c_schedule = {0.0};
  AlternationTrace trace;
  const Funnel funnel = optimize_funnel(unstable, cand, FunnelMode::kExact, opts, &trace);
  CHECK_FALSE(funnel.verified);
  CHECK(trace.iterations == 0);
  CHECK(trace.h_values.empty());
  CHECK_FALSE(all_certified(funnel.certificates));
  CHECK(funnel.certificates.at(0).worst_margin() > 0.0);
}

TEST_CASE("h_objective integrates rho over the span") {
  const auto knots = uniform_knots(0.0, 5.0, 6);
  CHECK(h_objective(const_pp(knots, 1.0)) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(h_objective(const_pp(knots, 2.0)) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(h_objective(initial_rho(knots, 0.0)) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("funnel_volume matches hand integrals") {
  const auto knots = uniform_knots(0.0, 2.0, 5);
  LyapunovCandidate c1 = const_candidate(knots, Eigen::MatrixXd::Identity(1, 1));
  CHECK(funnel_volume(c1) == doctest::Approx(2.0).epsilon(1e-10));
  c1.rho = const_pp(knots, 4.0);  // sqrt(rho) doubles the radius
  CHECK(funnel_volume(c1) == doctest::Approx(4.0).epsilon(1e-10));

  LyapunovCandidate c2 = const_candidate(knots, 4.0 * Eigen::Matrix2d::Identity());
  CHECK(funnel_volume(c2) == doctest::Approx(2.0 / 4.0).epsilon(1e-10));  // 1/sqrt(det)
}

TEST_CASE("level_set_at scales the metric by rho") {
  const auto knots = uniform_knots(0.0, 1.0, 3);
  LyapunovCandidate cand = const_candidate(knots, 2.0 * Eigen::Matrix2d::Identity());
  std::vector<double> vals{4.0, 2.0, 1.0};
  const VarSet ts{true, 0, 0};
  std::vector<Polynomial> pieces;
  for (int i = 0; i < 2; ++i) {
    Polynomial p = Polynomial::constant(ts, vals[i]);
    p += Polynomial::variable(ts, 0) * (vals[i + 1] - vals[i]);
    pieces.push_back(p);
  }
  cand.rho = PiecewisePolynomial(knots, pieces);

  const Ellipsoid e0 = level_set_at(cand, 0.0);
  CHECK((e0.P - 0.5 * Eigen::Matrix2d::Identity()).norm() < 1e-12);
  CHECK(e0.center.norm() == 0.0);
  const Ellipsoid e1 = level_set_at(cand, 1.0);
  CHECK((e1.P - 2.0 * Eigen::Matrix2d::Identity()).norm() < 1e-12);
  CHECK_THROWS_AS((void)level_set_at(cand, 1.5), std::out_of_range);
  CHECK_THROWS_AS((void)level_set_at(cand, -0.5), std::out_of_range);
}

TEST_CASE("funnel mode names") {
  CHECK(std::string(to_string(FunnelMode::kExact)) == "exact");
  CHECK(std::string(to_string(FunnelMode::kSampled)) == "sampled");
}
