#pragma once
// Sum-of-Squares programs: polynomial constraints p ∈ Σ whose coefficients
// are affine in scalar decision variables, compiled to semidefinite programs
// through the Gram parameterization p = z'Gz (z a monomial basis, G PSD).
// Includes witness recovery (Gram matrices, explicit square decompositions)
// and a standalone SOS membership check.

#include <Eigen/Dense>
#include <limits>
#include <map>
#include <vector>

#include "funnelcert/poly.hpp"
#include "funnelcert/sdp.hpp"

namespace funnelcert {

// Affine expression constant + sum coeffs[i] * v_i over decision scalars v.
struct LinExpr {
  double constant = 0.0;
  std::map<int, double> coeffs;

  LinExpr() = default;
  LinExpr(double c) : constant(c) {}
  static LinExpr var(int index, double scale = 1.0);

  bool is_constant() const { return coeffs.empty(); }
  bool is_zero() const;
  double eval(const Eigen::VectorXd& v) const;

  LinExpr& operator+=(const LinExpr& rhs);
  LinExpr& operator-=(const LinExpr& rhs);
  LinExpr& operator*=(double c);
  friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
  friend LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
  friend LinExpr operator*(LinExpr a, double c) { return a *= c; }
  friend LinExpr operator*(double c, LinExpr a) { return a *= c; }
  LinExpr operator-() const;
};

// Polynomial whose coefficients are LinExpr: affine in the decision scalars
// by construction (products with plain polynomials keep it affine).
class DecisionPoly {
 public:
  using TermMap = std::map<Monomial, LinExpr, MonomialLess>;

  DecisionPoly() = default;
  explicit DecisionPoly(const VarSet& vars) : vars_(vars) {}
  explicit DecisionPoly(const Polynomial& p);

  const VarSet& vars() const { return vars_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  int total_degree() const;
  int degree_in(int v) const;

  void add_term(const Monomial& m, const LinExpr& e);
  // Substitutes decision values, leaving an ordinary polynomial.
  Polynomial at(const Eigen::VectorXd& v) const;

  DecisionPoly& operator+=(const DecisionPoly& rhs);
  DecisionPoly& operator-=(const DecisionPoly& rhs);
  DecisionPoly& operator*=(double c);
  friend DecisionPoly operator+(DecisionPoly a, const DecisionPoly& b) { return a += b; }
  friend DecisionPoly operator-(DecisionPoly a, const DecisionPoly& b) { return a -= b; }
  friend DecisionPoly operator*(DecisionPoly a, double c) { return a *= c; }
  friend DecisionPoly operator*(double c, DecisionPoly a) { return a *= c; }
  friend DecisionPoly operator*(const Polynomial& p, const DecisionPoly& d);
  friend DecisionPoly operator*(const DecisionPoly& d, const Polynomial& p) { return p * d; }
  DecisionPoly operator-() const;

 private:
  void prune();
  VarSet vars_;
  TermMap terms_;
};

// Affine scalar side condition: expr == 0 or expr >= 0.
struct LinearConstraint {
  LinExpr expr;
  bool equality = true;
};

enum class Sense { kMaximize, kMinimize };

struct SosProgram {
  int n_decision = 0;
  std::vector<DecisionPoly> sos_constraints;
  std::vector<LinearConstraint> linear_constraints;
  LinExpr objective;  // affine in the decision scalars; constant carried
  Sense sense = Sense::kMaximize;

  int add_decision() { return n_decision++; }
};

// Graded-lex list of monomials over (time, states) with input exponents zero:
// joint total degree <= total_cap, time exponent <= time_cap, total degree
// over the states <= state_cap (-1 = no cap; total_cap must be >= 0).
std::vector<Monomial> monomial_basis_list(const VarSet& vars, int total_cap,
                                          int time_cap = -1, int state_cap = -1);

// Fresh decision polynomial with one new decision scalar per listed monomial.
DecisionPoly decision_poly(SosProgram& prog, const VarSet& vars,
                           const std::vector<Monomial>& monomials);

// Gram basis for one SOS constraint: monomials of degree <= deg/2 inside the
// per-variable degree box of the support, then iteratively pruned by diagonal
// consistency (a basis monomial m survives only if 2m is in the support or
// two distinct surviving monomials sum to 2m; otherwise PSD-ness forces its
// Gram row to vanish).  Throws std::invalid_argument on odd total degree.
std::vector<Monomial> gram_basis(const DecisionPoly& constraint);

// Compiled program: one PSD Gram block per (nonzero) SOS constraint, one 1x1
// slack block per scalar inequality, the decision scalars as free variables,
// and one equality row per matched monomial coefficient.
struct SosCompilation {
  SdpProblem sdp;
  std::vector<std::vector<Monomial>> bases;  // per SOS constraint
  std::vector<int> gram_blocks;              // block index; -1 for a zero constraint
};

// Deterministic: identical programs yield identical SDP data.  Throws
// std::invalid_argument on odd-degree constraints.
SosCompilation compile(const SosProgram& prog);

enum class SosStatus {
  kOptimal,
  kInfeasible,       // no Gram matrix matches the coefficients
  kUnbounded,        // objective unbounded over the feasible set
  kMaxIterations,
  kNumericalFailure,
};

const char* to_string(SosStatus s);

struct SosSolution {
  SosStatus status = SosStatus::kNumericalFailure;
  Eigen::VectorXd decision;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::vector<Eigen::MatrixXd> grams;        // per SOS constraint (0x0 for zero constraints)
  std::vector<std::vector<Monomial>> bases;  // matching monomial bases
  SdpSolution sdp;                           // residuals, trace, rays
};

SosSolution solve_sos(const SosProgram& prog, const SolverOptions& opts = {});

// z'Gz expanded over the given basis.
Polynomial gram_poly(const VarSet& vars, const std::vector<Monomial>& basis,
                     const Eigen::MatrixXd& G);

// Explicit squares from an eigendecomposition of G (negative eigenvalues at
// the PSD tolerance floor are clipped): p ≈ sum_i g_i^2.
std::vector<Polynomial> sos_decomposition(const VarSet& vars,
                                          const std::vector<Monomial>& basis,
                                          const Eigen::MatrixXd& G);

struct SosCheck {
  bool is_sos = false;
  std::vector<Monomial> basis;
  Eigen::MatrixXd gram;
  double coeff_residual = std::numeric_limits<double>::quiet_NaN();
  double min_eigenvalue = std::numeric_limits<double>::quiet_NaN();
  SdpSolution sdp;  // carries the Farkas ray when not SOS
};

// Decides SOS membership of a fixed polynomial by minimizing trace(G) over
// the matching Gram matrices, with a loosened duality-gap tolerance
// (membership only needs primal feasibility).  A returned witness satisfies
// max-abs coefficient residual <= 1e-7 * (1 + max-abs coeff of p) and
// lambda_min(G) >= -1e-8 * max(1, trace G); a solver run that stalls short of
// optimality is still accepted when its best Gram passes those gates.  Throws
// std::runtime_error when the solver fails without an infeasibility
// certificate; throws std::invalid_argument on odd degree.
SosCheck check_sos(const Polynomial& p, const SolverOptions& opts = {});

}  // namespace funnelcert
