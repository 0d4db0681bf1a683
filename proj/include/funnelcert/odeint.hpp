#pragma once
// Adaptive explicit Runge-Kutta integration (Dormand-Prince 4(5) with a
// quartic dense-output interpolant), backward matrix differential equations
// (Lyapunov, Riccati), and piecewise-polynomial fitting of sampled paths.

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "funnelcert/poly.hpp"

namespace funnelcert {

struct IntegratorOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double max_step = 0.0;     // 0 disables the cap
  int max_steps = 200000;
};

using Field = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

// One accepted step's dense-output coefficients (quartic in the step-local
// coordinate theta in [0,1]; h keeps the sign of the integration direction).
struct DenseSegment {
  double t_start = 0.0;
  double h = 0.0;
  Eigen::VectorXd r1, r2, r3, r4, r5;
};

// Solution samples at the accepted integrator steps, normalized to ascending
// time regardless of integration direction, with dense evaluation between
// samples.
class SampledPath {
 public:
  SampledPath() = default;
  SampledPath(std::vector<double> times, std::vector<Eigen::VectorXd> values,
              std::vector<Eigen::VectorXd> derivs, std::vector<DenseSegment> segments);

  int dim() const { return values_.empty() ? 0 : static_cast<int>(values_.front().size()); }
  const std::vector<double>& times() const { return times_; }
  const std::vector<Eigen::VectorXd>& values() const { return values_; }
  const std::vector<Eigen::VectorXd>& derivs() const { return derivs_; }
  double t0() const { return times_.front(); }
  double tf() const { return times_.back(); }

  Eigen::VectorXd eval(double t) const;
  Eigen::VectorXd eval_deriv(double t) const;

 private:
  int segment_index(double t) const;
  std::vector<double> times_;
  std::vector<Eigen::VectorXd> values_;
  std::vector<Eigen::VectorXd> derivs_;
  std::vector<DenseSegment> segments_;
};

// Integrates dy/dt = field(t, y) from t0 to tf (either direction).  Throws
// std::runtime_error on step-size collapse (below 1e-12 of the span) or when
// max_steps is exceeded.
SampledPath integrate(const Field& field, double t0, double tf,
                      const Eigen::VectorXd& y0, const IntegratorOptions& opts = {});

// Symmetric-matrix-valued path backed by a SampledPath of the packed upper
// triangle.
class MatrixPath {
 public:
  MatrixPath() = default;
  MatrixPath(int n, SampledPath packed) : n_(n), packed_(std::move(packed)) {}

  int n() const { return n_; }
  const SampledPath& packed() const { return packed_; }
  const std::vector<double>& times() const { return packed_.times(); }
  Eigen::MatrixXd eval(double t) const;
  Eigen::MatrixXd eval_deriv(double t) const;
  Eigen::MatrixXd value_at(int sample_index) const;

 private:
  int n_ = 0;
  SampledPath packed_;
};

Eigen::VectorXd pack_symmetric(const Eigen::MatrixXd& m);
Eigen::MatrixXd unpack_symmetric(const Eigen::VectorXd& v, int n);

// Solves -dP/dt = A(t)'P + PA(t) + Q backward from P(tf) = Pf.  The result
// is normalized to ascending time on [t0, tf].  Throws if P loses positive
// definiteness at an accepted sample (the message names the time).
MatrixPath solve_lyapunov(const std::function<Eigen::MatrixXd(double)>& A,
                          const Eigen::MatrixXd& Q, const Eigen::MatrixXd& Pf,
                          double t0, double tf, const IntegratorOptions& opts = {});

// Solves -dS/dt = A(t)'S + SA(t) + Q - S B(t) R^{-1} B(t)' S backward from
// S(tf) = Pf, with the same normalization and definiteness check.
MatrixPath solve_riccati(const std::function<Eigen::MatrixXd(double)>& A,
                         const std::function<Eigen::MatrixXd(double)>& B,
                         const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                         const Eigen::MatrixXd& Pf, double t0, double tf,
                         const IntegratorOptions& opts = {});

enum class FitType { kCubicHermite, kLinear, kZeroOrderHold };

// Downselects a knot grid of exactly n_knots from the accepted sample times,
// keeping both endpoints and following the accepted-step density (index
// quantiles).  If fewer samples than n_knots exist, the widest spans are
// bisected.
std::vector<double> resample_knots(const std::vector<double>& times, int n_knots);

// Fits each coordinate of the path over the knot grid.  Cubic Hermite uses
// dense values and derivatives at the knots; linear interpolates values;
// zero-order-hold is left-continuous (each piece holds the left knot value).
// Returns an n-by-1 PolyMatrix of time-only piecewise polynomials.
PolyMatrix fit_path(const SampledPath& path, const std::vector<double>& knots,
                    FitType type);

// Same, for a symmetric matrix path; the result is marked symmetric.
PolyMatrix fit_matrix(const MatrixPath& path, const std::vector<double>& knots,
                      FitType type);

}  // namespace funnelcert
