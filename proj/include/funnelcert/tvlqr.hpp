#pragma once
// Time-varying LQR synthesis around a nominal trajectory of a polynomial
// plant: exact symbolic linearization, the Riccati-based gain schedule, and
// the closed-loop system obtained by substituting the affine feedback policy
// into the plant (eliminating the input variables exactly).

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "funnelcert/odeint.hpp"
#include "funnelcert/poly.hpp"

namespace funnelcert {

// Polynomial plant xdot = f0(x, u) with no explicit time dependence; every
// component lives over the variable set [x1..xn][u1..um].
class ControlledDynamics {
 public:
  ControlledDynamics() = default;
  ControlledDynamics(std::vector<Polynomial> f0, int n_states, int n_inputs);

  int n() const { return n_; }
  int m() const { return m_; }
  const std::vector<Polynomial>& f0() const { return f0_; }
  const VarSet& vars() const { return f0_.front().vars(); }

  Eigen::VectorXd eval(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;

 private:
  std::vector<Polynomial> f0_;
  int n_ = 0, m_ = 0;
};

struct Linearization {
  Eigen::MatrixXd A;  // df0/dx, n-by-n
  Eigen::MatrixXd B;  // df0/du, n-by-m
};

// Exact Jacobians of the polynomial field at the point (x, u), by symbolic
// differentiation followed by evaluation.
Linearization linearize(const ControlledDynamics& sys, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& u);

// Gain samples K(t_i) on a shared time grid.
struct GainSchedule {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> gains;  // each m-by-n
};

// K(t) = R^{-1} B(t)' S(t) sampled at the knots of the Riccati solution S.
// Throws std::invalid_argument when R is not positive definite.
GainSchedule tvlqr_gain(const MatrixPath& S,
                        const std::function<Eigen::MatrixXd(double)>& B,
                        const Eigen::MatrixXd& R);

// Left-continuous zero-order-hold fit: piece i holds the gain sampled at the
// last schedule time <= knots[i].
PolyMatrix fit_gain_zoh(const GainSchedule& sched, const std::vector<double>& knots);

// Exact piecewise rewrite of global-time polynomials onto a knot grid: each
// piece substitutes t = knots[i] + dt_i * s into the global form, so the
// rewrite is exact for any polynomial degree.  Entries are row-major.
PolyMatrix to_piecewise(const std::vector<Polynomial>& entries, int rows, int cols,
                        const std::vector<double>& knots);

// Affine feedback policy pi(t, x) = u0(t) - Khat(t) (x - xhat0(t)) with all
// three parts on one shared knot grid (u0 m-by-1, Khat m-by-n piecewise
// constant, xhat0 n-by-1).
struct FeedbackPolicy {
  PolyMatrix u0;
  PolyMatrix Khat;
  PolyMatrix xhat0;

  Eigen::VectorXd eval(double t, const Eigen::VectorXd& x) const;
};

// Closed-loop system xdot = f(t, x): each state component is a piecewise
// polynomial in (t, x) over a shared knot grid, written per piece in the
// local time coordinate.
class SystemDynamics {
 public:
  SystemDynamics() = default;
  explicit SystemDynamics(std::vector<PiecewisePolynomial> f);

  int n() const { return static_cast<int>(f_.size()); }
  const std::vector<PiecewisePolynomial>& f() const { return f_; }
  const PiecewisePolynomial& component(int c) const { return f_[c]; }
  const std::vector<double>& knots() const { return f_.front().knots(); }
  double t0() const { return knots().front(); }
  double tf() const { return knots().back(); }

  Eigen::VectorXd eval(double t, const Eigen::VectorXd& x) const;
  // Adapter for integrate().
  Field field() const;

 private:
  std::vector<PiecewisePolynomial> f_;
};

// Substitutes the policy into the plant, f(t, x) = f0(x, pi(t, x)); the input
// variables are eliminated exactly and the piece grid is the policy's.
SystemDynamics close_loop(const ControlledDynamics& sys, const FeedbackPolicy& policy);

}  // namespace funnelcert
