#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <random>
#include <sstream>

#include "funnelcert/sos.hpp"

using namespace funnelcert;

namespace {

VarSet states_only(int n) { return VarSet{false, n, 0}; }

Monomial mono(const VarSet& vars, std::initializer_list<int> exps) {
  Monomial m(vars.size());
  int i = 0;
  for (int e : exps) m.exp[i++] = e;
  return m;
}

long long binomial(int n, int k) {
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Dense generic polynomial (1 + sum x_i)^d: every monomial of total degree
// <= d appears with a positive coefficient.
Polynomial dense_poly(const VarSet& vars, int d) {
  Polynomial p = Polynomial::constant(vars, 1.0);
  for (int k = 0; k < vars.n_states; ++k) p += Polynomial::variable(vars, vars.state_index(k));
  Polynomial q = Polynomial::constant(vars, 1.0);
  for (int i = 0; i < d; ++i) q = q * p;
  return q;
}

Polynomial motzkin() {
  VarSet v = states_only(2);
  Polynomial p(v);
  p.add_term(mono(v, {4, 2}), 1.0);
  p.add_term(mono(v, {2, 4}), 1.0);
  p.add_term(mono(v, {2, 2}), -3.0);
  p.add_term(mono(v, {0, 0}), 1.0);
  return p;
}

// Validates a Farkas ray (y, Z) returned for a primal-infeasible SDP:
// b'y = 1, adjoint(y) + Z = 0, Z PSD within tolerance.
void require_valid_farkas_ray(const SdpProblem& prob, const SdpSolution& sol) {
  REQUIRE(sol.status == SdpStatus::kPrimalInfeasible);
  double bty = 0.0;
  for (int k = 0; k < prob.n_constraints(); ++k) bty += prob.constraints[k].rhs * sol.y[k];
  CHECK(bty == doctest::Approx(1.0).epsilon(1e-6));

  std::vector<Eigen::MatrixXd> adj;
  for (int d : prob.block_dims) adj.push_back(Eigen::MatrixXd::Zero(d, d));
  double scale = 1.0;
  for (int k = 0; k < prob.n_constraints(); ++k)
    for (const auto& e : prob.constraints[k].entries) {
      adj[e.block](e.row, e.col) += sol.y[k] * e.value;
      if (e.row != e.col) adj[e.block](e.col, e.row) += sol.y[k] * e.value;
      scale = std::max(scale, std::fabs(e.value));
    }
  for (size_t b = 0; b < adj.size(); ++b) {
    // Documented certificate bound: 1e3 * feas_tol * max-abs constraint entry.
    CHECK((adj[b] + sol.Z[b]).cwiseAbs().maxCoeff() <= 1e-5 * scale);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sol.Z[b], Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

}  // namespace

TEST_CASE("linear expressions evaluate and combine") {
  LinExpr e = LinExpr::var(0, 2.0) + LinExpr::var(2, -1.0) + 3.0;
  Eigen::VectorXd v(3);
  v << 1.0, 5.0, 4.0;
  CHECK(e.eval(v) == doctest::Approx(2.0 - 4.0 + 3.0));
  CHECK(!e.is_constant());

  LinExpr f = e - LinExpr::var(0, 2.0);
  CHECK(f.coeffs.count(0) == 0);  // exact cancellation removes the entry
  CHECK(f.eval(v) == doctest::Approx(-1.0));

  LinExpr g = (LinExpr::var(1) + 1.0) * 2.0;
  CHECK(g.constant == doctest::Approx(2.0));
  CHECK(g.coeffs.at(1) == doctest::Approx(2.0));
  CHECK((-g).eval(v) == doctest::Approx(-12.0));
  CHECK(LinExpr{}.is_zero());
  CHECK_THROWS_AS(LinExpr::var(-1), std::invalid_argument);

  Eigen::VectorXd tooshort(1);
  tooshort << 1.0;
  CHECK_THROWS_AS(e.eval(tooshort), std::invalid_argument);
}

TEST_CASE("decision polynomials stay affine through arithmetic") {
  VarSet vars = states_only(1);
  Polynomial x = Polynomial::variable(vars, 0);
  Polynomial one = Polynomial::constant(vars, 1.0);

  SosProgram prog;
  DecisionPoly mu = decision_poly(prog, vars, monomial_basis_list(vars, 1));
  CHECK(prog.n_decision == 2);  // 1, x

  // (1 + 2x) * (v0 + v1 x) = v0 + (2 v0 + v1) x + 2 v1 x^2.
  DecisionPoly prod = (one + 2.0 * x) * mu;
  Eigen::VectorXd v(2);
  v << 3.0, 5.0;
  Polynomial got = prod.at(v);
  CHECK(got.coeff(mono(vars, {0})) == doctest::Approx(3.0));
  CHECK(got.coeff(mono(vars, {1})) == doctest::Approx(11.0));
  CHECK(got.coeff(mono(vars, {2})) == doctest::Approx(10.0));
  CHECK(prod.total_degree() == 2);
  CHECK(prod.degree_in(0) == 2);

  DecisionPoly sum = prod - prod;
  CHECK(sum.is_zero());

  DecisionPoly other(Polynomial::variable(states_only(2), 0));
  CHECK_THROWS_AS(prod += other, std::invalid_argument);
  CHECK_THROWS_AS(Polynomial::variable(states_only(2), 0) * prod, std::invalid_argument);
}

TEST_CASE("monomial list generation respects degree caps") {
  VarSet tx{true, 2, 0};
  // Total cap dominates: all (t,x) monomials of degree <= 2.
  auto all2 = monomial_basis_list(tx, 2);
  CHECK(all2.size() == binomial(3 + 2, 2));
  for (size_t i = 1; i < all2.size(); ++i) CHECK(monomial_less(all2[i - 1], all2[i]));

  // Time cap zero removes every t-carrying monomial.
  auto xonly = monomial_basis_list(tx, 2, 0);
  CHECK(xonly.size() == binomial(2 + 2, 2));
  for (const auto& m : xonly) CHECK(m.exp[tx.time_index()] == 0);

  // State cap: t-degree up to 2, state degree up to 1.
  auto mixed = monomial_basis_list(tx, 3, 2, 1);
  for (const auto& m : mixed) {
    CHECK(m.exp[tx.time_index()] <= 2);
    CHECK(m.exp[tx.state_index(0)] + m.exp[tx.state_index(1)] <= 1);
  }
  CHECK(mixed.size() == 3 * 3);  // t^{0..2} x {1, x1, x2}

  CHECK_THROWS_AS(monomial_basis_list(tx, -1), std::invalid_argument);
}

TEST_CASE("gram basis enumerates half-degree monomials") {
  VarSet v1 = states_only(1);
  Polynomial p = dense_poly(v1, 4);
  auto b = gram_basis(DecisionPoly(p));
  REQUIRE(b.size() == 3);  // {1, x, x^2}
  CHECK(b[0] == mono(v1, {0}));
  CHECK(b[1] == mono(v1, {1}));
  CHECK(b[2] == mono(v1, {2}));

  VarSet v2 = states_only(2);
  auto b2 = gram_basis(DecisionPoly(dense_poly(v2, 2)));
  REQUIRE(b2.size() == 3);  // {1, x1, x2}
  CHECK(b2[0] == mono(v2, {0, 0}));
  CHECK(b2[1] == mono(v2, {0, 1}));
  CHECK(b2[2] == mono(v2, {1, 0}));

  // Dense polynomials admit no pruning: the count is C(n + d/2, d/2).
  for (auto [n, d] : {std::pair{1, 4}, {2, 4}, {3, 2}, {2, 6}}) {
    VarSet vs = states_only(n);
    auto basis = gram_basis(DecisionPoly(dense_poly(vs, d)));
    CHECK(basis.size() == static_cast<size_t>(binomial(n + d / 2, d / 2)));
  }

  CHECK_THROWS_AS(gram_basis(DecisionPoly(Polynomial::variable(v1, 0))), std::invalid_argument);
  Polynomial cubic = dense_poly(v1, 3);
  CHECK_THROWS_AS(gram_basis(DecisionPoly(cubic)), std::invalid_argument);
  CHECK(gram_basis(DecisionPoly(Polynomial(v1))).empty());
}

TEST_CASE("gram basis prunes the Motzkin support to the half Newton polytope") {
  VarSet v = states_only(2);
  auto b = gram_basis(DecisionPoly(motzkin()));
  REQUIRE(b.size() == 4);
  CHECK(b[0] == mono(v, {0, 0}));
  CHECK(b[1] == mono(v, {1, 1}));
  CHECK(b[2] == mono(v, {1, 2}));
  CHECK(b[3] == mono(v, {2, 1}));
}

TEST_CASE("compile pins Gram entries by exact coefficient matching") {
  VarSet v = states_only(1);
  Polynomial x = Polynomial::variable(v, 0);
  Polynomial p = x * x + 2.0 * x + Polynomial::constant(v, 1.0);  // (x+1)^2

  SosProgram prog;
  prog.sos_constraints.push_back(DecisionPoly(p));
  SosCompilation comp = compile(prog);
  REQUIRE(comp.sdp.block_dims.size() == 1);
  CHECK(comp.sdp.block_dims[0] == 2);
  CHECK(comp.sdp.n_constraints() == 3);  // coefficients of 1, x, x^2

  SosSolution sol = solve_sos(prog);
  REQUIRE(sol.status == SosStatus::kOptimal);
  const Eigen::MatrixXd& G = sol.grams[0];
  // Basis {1, x}: every entry is pinned, G = [[1,1],[1,1]].
  CHECK(G(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(G(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(G(1, 1) == doctest::Approx(1.0).epsilon(1e-6));
  // Eigenvalues of [[a,b],[b,a]] are a-b and a+b: here 0 and 2.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues()[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(es.eigenvalues()[1] == doctest::Approx(2.0).epsilon(1e-6));

  // Deterministic compilation: bitwise-identical serialized SDP data.
  std::ostringstream s1, s2;
  write_sdp(s1, comp.sdp);
  write_sdp(s2, compile(prog).sdp);
  CHECK(s1.str() == s2.str());

  SosProgram bad;
  bad.sos_constraints.push_back(DecisionPoly(x));
  CHECK_THROWS_AS(compile(bad), std::invalid_argument);

  SosProgram loose;
  loose.objective = LinExpr::var(7);  // index out of range
  CHECK_THROWS_AS(compile(loose), std::invalid_argument);
}

TEST_CASE("check_sos certifies simple sums of squares") {
  VarSet v = states_only(1);
  Polynomial x = Polynomial::variable(v, 0);

  Polynomial p = x * x + 2.0 * x + Polynomial::constant(v, 1.0);
  SosCheck c = check_sos(p);
  REQUIRE(c.is_sos);
  CHECK(c.coeff_residual <= 1e-7 * (1.0 + p.max_abs_coeff()));
  CHECK(c.min_eigenvalue >= -1e-8 * std::max(1.0, c.gram.trace()));
  // Rank-one Gram: the dominant square is x+1 up to sign, and the squares
  // sum back to p.
  auto gs = sos_decomposition(v, c.basis, c.gram);
  REQUIRE(!gs.empty());
  double sign = gs[0].coeff(mono(v, {1})) > 0 ? 1.0 : -1.0;
  CHECK(sign * gs[0].coeff(mono(v, {0})) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(sign * gs[0].coeff(mono(v, {1})) == doctest::Approx(1.0).epsilon(1e-4));
  Polynomial back(v);
  for (const Polynomial& g : gs) back += g * g;
  for (const auto& [m, coeff] : p.terms())
    CHECK(back.coeff(m) == doctest::Approx(coeff).epsilon(1e-5));

  CHECK(check_sos(x * x + Polynomial::constant(v, 1.0)).is_sos);

  VarSet v2 = states_only(2);
  Polynomial a = Polynomial::variable(v2, 0) - Polynomial::variable(v2, 1);
  Polynomial b = Polynomial::variable(v2, 0) + 2.0 * Polynomial::variable(v2, 1);
  CHECK(check_sos(a * a + b * b).is_sos);

  CHECK(check_sos(Polynomial(v)).is_sos);  // zero polynomial
  CHECK_THROWS_AS(check_sos(x), std::invalid_argument);
}

TEST_CASE("check_sos returns a validated infeasibility certificate") {
  VarSet v = states_only(1);
  Polynomial x = Polynomial::variable(v, 0);

  Polynomial neg = -1.0 * (x * x);
  SosCheck c = check_sos(neg);
  CHECK(!c.is_sos);
  {
    SosProgram prog;
    prog.sos_constraints.push_back(DecisionPoly(neg));
    require_valid_farkas_ray(compile(prog).sdp, c.sdp);
  }

  SosCheck m = check_sos(motzkin());
  CHECK(!m.is_sos);
  {
    SosProgram prog;
    prog.sos_constraints.push_back(DecisionPoly(motzkin()));
    require_valid_farkas_ray(compile(prog).sdp, m.sdp);
  }
}

TEST_CASE("random sums of squares round-trip through the certificate") {
  std::mt19937_64 rng(20240818ull);
  std::uniform_real_distribution<double> coeff(-1.0, 1.0);
  std::uniform_int_distribution<int> nvars(1, 3), nsq(1, 3), gdeg(1, 2);

  for (int trial = 0; trial < 100; ++trial) {
    VarSet v = states_only(nvars(rng));
    Polynomial p(v);
    for (int i = nsq(rng); i > 0; --i) {
      Polynomial g(v);
      for (const Monomial& m : monomial_basis_list(v, gdeg(rng))) g.add_term(m, coeff(rng));
      p += g * g;
    }
    SosCheck c = check_sos(p);
    REQUIRE(c.is_sos);

    // Reconstruct from the explicit squares and compare coefficientwise.
    Polynomial back(v);
    for (const Polynomial& g : sos_decomposition(v, c.basis, c.gram)) back += g * g;
    Polynomial diff = back - p;
    CHECK(diff.max_abs_coeff() <= 1e-6 * (1.0 + p.max_abs_coeff()));
  }
}

TEST_CASE("feasibility is invariant under positive scaling") {
  std::mt19937_64 rng(77ull);
  std::uniform_real_distribution<double> coeff(-1.0, 1.0);
  VarSet v = states_only(2);
  for (int trial = 0; trial < 5; ++trial) {
    Polynomial p(v);
    for (int i = 0; i < 2; ++i) {
      Polynomial g(v);
      for (const Monomial& m : monomial_basis_list(v, 2)) g.add_term(m, coeff(rng));
      p += g * g;
    }
    for (double alpha : {0.1, 10.0}) CHECK(check_sos(alpha * p).is_sos);
  }
}

TEST_CASE("objectives recover analytic polynomial bounds") {
  VarSet v = states_only(1);
  Polynomial x = Polynomial::variable(v, 0);
  Polynomial f = x * x + 2.0 * x + Polynomial::constant(v, 2.0);  // min value 1 at x = -1

  // Largest lower bound: max gamma with f - gamma in Sigma.
  SosProgram prog;
  int gamma = prog.add_decision();
  DecisionPoly con(f);
  con.add_term(Monomial(v.size()), -LinExpr::var(gamma));
  prog.sos_constraints.push_back(con);
  prog.objective = LinExpr::var(gamma);
  prog.sense = Sense::kMaximize;
  SosSolution sol = solve_sos(prog);
  REQUIRE(sol.status == SosStatus::kOptimal);
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.decision[gamma] == doctest::Approx(1.0).epsilon(1e-6));

  // Smallest gamma with gamma + x^2 in Sigma is 0.
  SosProgram prog2;
  int g2 = prog2.add_decision();
  DecisionPoly con2(x * x);
  con2.add_term(Monomial(v.size()), LinExpr::var(g2));
  prog2.sos_constraints.push_back(con2);
  prog2.objective = LinExpr::var(g2);
  prog2.sense = Sense::kMinimize;
  SosSolution sol2 = solve_sos(prog2);
  REQUIRE(sol2.status == SosStatus::kOptimal);
  CHECK(sol2.objective == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("s-procedure bound with a shared sos multiplier") {
  // max of 1 - x^2 over {x^2 <= 1} is 1: minimize gamma subject to
  // gamma - (1 - x^2) - mu (1 - x^2) in Sigma with mu in Sigma.
  VarSet v = states_only(1);
  Polynomial x = Polynomial::variable(v, 0);
  Polynomial region = Polynomial::constant(v, 1.0) - x * x;

  SosProgram prog;
  int gamma = prog.add_decision();
  DecisionPoly mu = decision_poly(prog, v, monomial_basis_list(v, 2));

  DecisionPoly main(-region);
  main.add_term(Monomial(v.size()), LinExpr::var(gamma));
  main -= region * mu;
  prog.sos_constraints.push_back(main);
  prog.sos_constraints.push_back(mu);
  prog.objective = LinExpr::var(gamma);
  prog.sense = Sense::kMinimize;

  SosSolution sol = solve_sos(prog);
  REQUIRE(sol.status == SosStatus::kOptimal);
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-5));
  // The recovered multiplier is itself certified by its Gram block.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sol.grams[1], Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() >= -1e-7);
}

TEST_CASE("scalar side constraints and degenerate programs") {
  SosProgram prog;
  int v0 = prog.add_decision();
  prog.objective = LinExpr::var(v0);
  prog.sense = Sense::kMaximize;

  SUBCASE("inequality bound") {
    prog.linear_constraints.push_back({3.0 - LinExpr::var(v0), false});
    SosSolution sol = solve_sos(prog);
    REQUIRE(sol.status == SosStatus::kOptimal);
    CHECK(sol.objective == doctest::Approx(3.0).epsilon(1e-6));
  }
  SUBCASE("equality pin") {
    prog.linear_constraints.push_back({LinExpr::var(v0) - 2.0, true});
    SosSolution sol = solve_sos(prog);
    REQUIRE(sol.status == SosStatus::kOptimal);
    CHECK(sol.objective == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("unbounded objective") {
    CHECK(solve_sos(prog).status == SosStatus::kUnbounded);
  }
  SUBCASE("contradictory equalities") {
    prog.linear_constraints.push_back({LinExpr::var(v0) - 1.0, true});
    prog.linear_constraints.push_back({LinExpr::var(v0) - 2.0, true});
    CHECK(solve_sos(prog).status == SosStatus::kInfeasible);
  }
  SUBCASE("zero sos constraint is dropped") {
    prog.sos_constraints.push_back(DecisionPoly(states_only(1)));
    prog.linear_constraints.push_back({1.0 - LinExpr::var(v0), false});
    SosSolution sol = solve_sos(prog);
    REQUIRE(sol.status == SosStatus::kOptimal);
    CHECK(sol.grams[0].size() == 0);
    CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-6));
  }
}
