#pragma once
// Sparse multivariate polynomials over a structured variable set (one
// optional time variable, then state variables, then input variables),
// plus piecewise-in-time containers.  Terms are kept in graded
// lexicographic order so each polynomial has a single canonical form.

#include <map>
#include <span>
#include <string>
#include <vector>

namespace funnelcert {

// Coefficients with magnitude below this are dropped after arithmetic.
inline constexpr double kCoeffTol = 1e-14;

// Ordered ambient variable set: [t][x1..xn][u1..um].
struct VarSet {
  bool has_time = false;
  int n_states = 0;
  int n_inputs = 0;

  int size() const { return (has_time ? 1 : 0) + n_states + n_inputs; }
  int time_index() const { return has_time ? 0 : -1; }
  int state_index(int k) const { return (has_time ? 1 : 0) + k; }
  int input_index(int k) const { return (has_time ? 1 : 0) + n_states + k; }
  std::string name(int v) const;
  bool operator==(const VarSet&) const = default;
};

// Exponent vector; one entry per ambient variable, all nonnegative.
struct Monomial {
  std::vector<int> exp;

  Monomial() = default;
  explicit Monomial(int n_vars) : exp(n_vars, 0) {}
  explicit Monomial(std::vector<int> e) : exp(std::move(e)) {}

  int degree() const;
  int degree_in(int v) const { return exp[v]; }
  double eval(std::span<const double> point) const;
  bool operator==(const Monomial&) const = default;
};

// Graded lexicographic order: lower total degree first, exponent-vector
// lexicographic comparison inside a degree.
bool monomial_less(const Monomial& a, const Monomial& b);

struct MonomialLess {
  bool operator()(const Monomial& a, const Monomial& b) const {
    return monomial_less(a, b);
  }
};

class Polynomial {
 public:
  using TermMap = std::map<Monomial, double, MonomialLess>;

  Polynomial() = default;
  explicit Polynomial(const VarSet& vars) : vars_(vars) {}

  static Polynomial constant(const VarSet& vars, double c);
  static Polynomial variable(const VarSet& vars, int v);
  // Single term c * prod vars^exp.
  static Polynomial term(const VarSet& vars, const Monomial& m, double c);

  const VarSet& vars() const { return vars_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  int total_degree() const;
  int degree_in(int v) const;
  double coeff(const Monomial& m) const;
  double max_abs_coeff() const;

  void add_term(const Monomial& m, double c);

  Polynomial& operator+=(const Polynomial& rhs);
  Polynomial& operator-=(const Polynomial& rhs);
  Polynomial& operator*=(double c);
  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double c) { return a *= c; }
  friend Polynomial operator*(double c, Polynomial a) { return a *= c; }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b);
  Polynomial operator-() const;

  // Partial derivative with respect to variable v.
  Polynomial diff(int v) const;
  // Evaluation at a full point (one coordinate per ambient variable).
  double eval(std::span<const double> point) const;
  // Fixes variable v to the value c; the variable remains in the set with
  // exponent zero everywhere.
  Polynomial partial_eval(int v, double c) const;
  // Substitutes replacement[k] (over the target set) for each variable for
  // which a replacement is provided; identity entries map a variable to the
  // matching variable of the target set.
  Polynomial subst(const VarSet& target,
                   const std::vector<Polynomial>& replacement) const;
  // Removes the time slot; every term must have time exponent zero.
  Polynomial drop_time() const;

  std::string to_string() const;

 private:
  void prune();
  VarSet vars_;
  TermMap terms_;
};

// Polynomial pieces over consecutive time intervals [knots[i], knots[i+1]].
// Each piece is written in the local coordinate s = (t - knots[i]) / dt_i,
// s in [0, 1]; the time slot of the piece's variable set holds s.
class PiecewisePolynomial {
 public:
  PiecewisePolynomial() = default;
  PiecewisePolynomial(std::vector<double> knots, std::vector<Polynomial> pieces);

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<Polynomial>& pieces() const { return pieces_; }
  const Polynomial& piece(int i) const { return pieces_[i]; }
  int n_pieces() const { return static_cast<int>(pieces_.size()); }
  const VarSet& vars() const { return pieces_.front().vars(); }
  double t0() const { return knots_.front(); }
  double tf() const { return knots_.back(); }
  double dt(int i) const { return knots_[i + 1] - knots_[i]; }

  // Piece index owning time t (right-open intervals, last piece closed).
  int piece_index(double t) const;
  double local_coord(int i, double t) const { return (t - knots_[i]) / dt(i); }

  // Evaluation for time-only pieces.
  double eval(double t) const;
  // Evaluation at (t, x...) for pieces with state variables.
  double eval(double t, std::span<const double> x) const;

  // d/dt, built piecewise from d/ds via the chain rule.
  PiecewisePolynomial derivative_time() const;
  // Integral of a time-only piecewise polynomial over its whole span.
  double integrate() const;
  // Largest jump |piece_i(1) - piece_{i+1}(0)| over interior knots, with the
  // state variables fixed at zero exponent (time-only pieces expected).
  double max_knot_jump() const;
  bool is_continuous(double tol = 1e-9) const { return max_knot_jump() <= tol; }

 private:
  std::vector<double> knots_;
  std::vector<Polynomial> pieces_;
};

// Dense matrix (or vector) of piecewise polynomials on one shared knot grid.
class PolyMatrix {
 public:
  PolyMatrix() = default;
  PolyMatrix(int rows, int cols, std::vector<PiecewisePolynomial> entries,
             bool symmetric = false);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool symmetric() const { return symmetric_; }
  const PiecewisePolynomial& at(int r, int c) const;
  const std::vector<double>& knots() const;

  // Entry-wise evaluation at time t (time-only entries).
  std::vector<double> eval(double t) const;

 private:
  int rows_ = 0, cols_ = 0;
  bool symmetric_ = false;
  std::vector<PiecewisePolynomial> entries_;  // row-major
};

}  // namespace funnelcert
