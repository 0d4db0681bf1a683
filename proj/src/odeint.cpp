#include "funnelcert/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace funnelcert {

namespace {

// Dormand-Prince 4(5) tableau.

// Node coefficients
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;

// Stage coefficients
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                 a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;

// Embedded error weights (5th-order minus 4th-order solution)
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

// Dense-output weights
constexpr double d1 = -12715105075.0 / 11282082432.0;
constexpr double d3 = 87487479700.0 / 32700410799.0;
constexpr double d4 = -10690763975.0 / 1880347072.0;
constexpr double d5 = 701980252875.0 / 199316789632.0;
constexpr double d6 = -1453857185.0 / 822651844.0;
constexpr double d7 = 69997945.0 / 29380423.0;

double error_norm(const Eigen::VectorXd& err, const Eigen::VectorXd& y0,
                  const Eigen::VectorXd& y1, double atol, double rtol) {
  double acc = 0.0;
  for (int i = 0; i < err.size(); ++i) {
    double sc = atol + rtol * std::max(std::fabs(y0[i]), std::fabs(y1[i]));
    double q = err[i] / sc;
    acc += q * q;
  }
  return std::sqrt(acc / err.size());
}

double initial_step(const Field& f, double t0, double dir, const Eigen::VectorXd& y0,
                    const Eigen::VectorXd& f0, double atol, double rtol, double span) {
  auto rms = [&](const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (int i = 0; i < v.size(); ++i) {
      double sc = atol + rtol * std::fabs(y0[i]);
      acc += (v[i] / sc) * (v[i] / sc);
    }
    return std::sqrt(acc / v.size());
  };
  double d0 = rms(y0), dd1 = rms(f0);
  double h0 = (d0 < 1e-5 || dd1 < 1e-5) ? 1e-6 : 0.01 * d0 / dd1;
  h0 = std::min(h0, span);
  Eigen::VectorXd y1 = y0 + dir * h0 * f0;
  Eigen::VectorXd f1 = f(t0 + dir * h0, y1);
  double d2 = rms(f1 - f0) / h0;
  double h1;
  if (std::max(dd1, d2) <= 1e-15)
    h1 = std::max(1e-6, h0 * 1e-3);
  else
    h1 = std::pow(0.01 / std::max(dd1, d2), 0.2);
  return std::min({100 * h0, h1, span});
}

}  // namespace

SampledPath::SampledPath(std::vector<double> times, std::vector<Eigen::VectorXd> values,
                         std::vector<Eigen::VectorXd> derivs,
                         std::vector<DenseSegment> segments)
    : times_(std::move(times)),
      values_(std::move(values)),
      derivs_(std::move(derivs)),
      segments_(std::move(segments)) {
  for (size_t i = 0; i + 1 < times_.size(); ++i)
    if (!(times_[i] < times_[i + 1]))
      throw std::invalid_argument("SampledPath: times must be strictly increasing");
}

int SampledPath::segment_index(double t) const {
  if (t <= times_.front()) return 0;
  if (t >= times_.back()) return static_cast<int>(segments_.size()) - 1;
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  int idx = static_cast<int>(it - times_.begin()) - 1;
  return std::min(idx, static_cast<int>(segments_.size()) - 1);
}

Eigen::VectorXd SampledPath::eval(double t) const {
  if (segments_.empty()) return values_.front();
  const DenseSegment& s = segments_[segment_index(t)];
  double th = (t - s.t_start) / s.h;
  return s.r1 + th * (s.r2 + (1.0 - th) * (s.r3 + th * (s.r4 + (1.0 - th) * s.r5)));
}

Eigen::VectorXd SampledPath::eval_deriv(double t) const {
  if (segments_.empty()) return derivs_.front();
  const DenseSegment& s = segments_[segment_index(t)];
  double th = (t - s.t_start) / s.h;
  Eigen::VectorXd du = s.r2 + (1.0 - 2.0 * th) * s.r3 + (2.0 * th - 3.0 * th * th) * s.r4 +
                       (2.0 * th - 6.0 * th * th + 4.0 * th * th * th) * s.r5;
  return du / s.h;
}

SampledPath integrate(const Field& field, double t0, double tf,
                      const Eigen::VectorXd& y0, const IntegratorOptions& opts) {
  if (t0 == tf) throw std::invalid_argument("integrate: empty time span");
  const double dir = tf > t0 ? 1.0 : -1.0;
  const double span = std::fabs(tf - t0);
  const double hmax = opts.max_step > 0 ? opts.max_step : span;

  std::vector<double> times;
  std::vector<Eigen::VectorXd> values, derivs;
  std::vector<DenseSegment> segments;

  double t = t0;
  Eigen::VectorXd y = y0;
  Eigen::VectorXd k1 = field(t, y);
  times.push_back(t);
  values.push_back(y);
  derivs.push_back(k1);

  double h = dir * std::min(initial_step(field, t0, dir, y, k1, opts.atol, opts.rtol, span), hmax);
  int n_steps = 0;
  while (dir * (tf - t) > 0) {
    if (++n_steps > opts.max_steps)
      throw std::runtime_error("integrate: max step count exceeded");
    if (std::fabs(h) < 1e-12 * span)
      throw std::runtime_error("integrate: step size collapsed");
    if (dir * (t + h - tf) > 0) h = tf - t;

    Eigen::VectorXd k2 = field(t + c2 * h, y + h * (a21 * k1));
    Eigen::VectorXd k3 = field(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    Eigen::VectorXd k4 = field(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    Eigen::VectorXd k5 =
        field(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Eigen::VectorXd k6 =
        field(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Eigen::VectorXd ynew =
        y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    Eigen::VectorXd k7 = field(t + h, ynew);
    Eigen::VectorXd err =
        h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double en = error_norm(err, y, ynew, opts.atol, opts.rtol);
    if (en <= 1.0) {
      DenseSegment seg;
      seg.t_start = t;
      seg.h = h;
      seg.r1 = y;
      seg.r2 = ynew - y;
      seg.r3 = h * k1 - seg.r2;
      seg.r4 = seg.r2 - h * k7 - seg.r3;
      seg.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      segments.push_back(std::move(seg));

      t += h;
      y = ynew;
      k1 = k7;  // first-same-as-last
      times.push_back(t);
      values.push_back(y);
      derivs.push_back(k1);
      double fac = 0.9 * std::pow(std::max(en, 1e-10), -0.2);
      h *= std::clamp(fac, 0.2, 5.0);
    } else {
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
    }
    if (std::fabs(h) > hmax) h = dir * hmax;
  }

  if (dir < 0) {
    std::reverse(times.begin(), times.end());
    std::reverse(values.begin(), values.end());
    std::reverse(derivs.begin(), derivs.end());
    std::reverse(segments.begin(), segments.end());
  }
  return SampledPath(std::move(times), std::move(values), std::move(derivs),
                     std::move(segments));
}

Eigen::VectorXd pack_symmetric(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  Eigen::VectorXd v(n * (n + 1) / 2);
  int k = 0;
  for (int r = 0; r < n; ++r)
    for (int c = r; c < n; ++c) v[k++] = m(r, c);
  return v;
}

Eigen::MatrixXd unpack_symmetric(const Eigen::VectorXd& v, int n) {
  Eigen::MatrixXd m(n, n);
  int k = 0;
  for (int r = 0; r < n; ++r)
    for (int c = r; c < n; ++c) {
      m(r, c) = v[k];
      m(c, r) = v[k];
      ++k;
    }
  return m;
}

Eigen::MatrixXd MatrixPath::eval(double t) const {
  return unpack_symmetric(packed_.eval(t), n_);
}

Eigen::MatrixXd MatrixPath::eval_deriv(double t) const {
  return unpack_symmetric(packed_.eval_deriv(t), n_);
}

Eigen::MatrixXd MatrixPath::value_at(int sample_index) const {
  return unpack_symmetric(packed_.values()[sample_index], n_);
}

namespace {

MatrixPath solve_matrix_backward(const std::function<Eigen::MatrixXd(double, const Eigen::MatrixXd&)>& rhs,
                                 const Eigen::MatrixXd& Pf, double t0, double tf,
                                 const IntegratorOptions& opts, const char* what) {
  const int n = static_cast<int>(Pf.rows());
  Field field = [&rhs, n](double t, const Eigen::VectorXd& v) {
    return pack_symmetric(rhs(t, unpack_symmetric(v, n)));
  };
  SampledPath packed = integrate(field, tf, t0, pack_symmetric(Pf), opts);
  MatrixPath path(n, std::move(packed));
  for (size_t i = 0; i < path.times().size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(path.value_at(static_cast<int>(i)));
    if (es.eigenvalues().minCoeff() <= 0.0) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s: solution loses positive definiteness at t = %.6g",
                    what, path.times()[i]);
      throw std::runtime_error(buf);
    }
  }
  return path;
}

}  // namespace

MatrixPath solve_lyapunov(const std::function<Eigen::MatrixXd(double)>& A,
                          const Eigen::MatrixXd& Q, const Eigen::MatrixXd& Pf,
                          double t0, double tf, const IntegratorOptions& opts) {
  auto rhs = [&A, &Q](double t, const Eigen::MatrixXd& P) -> Eigen::MatrixXd {
    Eigen::MatrixXd At = A(t);
    return -(At.transpose() * P + P * At + Q);
  };
  return solve_matrix_backward(rhs, Pf, t0, tf, opts, "solve_lyapunov");
}

MatrixPath solve_riccati(const std::function<Eigen::MatrixXd(double)>& A,
                         const std::function<Eigen::MatrixXd(double)>& B,
                         const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                         const Eigen::MatrixXd& Pf, double t0, double tf,
                         const IntegratorOptions& opts) {
  Eigen::LLT<Eigen::MatrixXd> Rllt(R);
  if (Rllt.info() != Eigen::Success)
    throw std::invalid_argument("solve_riccati: R must be positive definite");
  auto rhs = [&A, &B, &Q, &Rllt](double t, const Eigen::MatrixXd& S) -> Eigen::MatrixXd {
    Eigen::MatrixXd At = A(t), Bt = B(t);
    Eigen::MatrixXd BtS = Bt.transpose() * S;
    return -(At.transpose() * S + S * At + Q - BtS.transpose() * Rllt.solve(BtS));
  };
  return solve_matrix_backward(rhs, Pf, t0, tf, opts, "solve_riccati");
}

std::vector<double> resample_knots(const std::vector<double>& times, int n_knots) {
  if (n_knots < 2) throw std::invalid_argument("resample_knots: need at least two knots");
  const int m = static_cast<int>(times.size());
  std::vector<double> knots;
  if (m >= n_knots) {
    knots.reserve(n_knots);
    for (int j = 0; j < n_knots; ++j) {
      int idx = static_cast<int>(std::llround(static_cast<double>(j) * (m - 1) / (n_knots - 1)));
      knots.push_back(times[idx]);
    }
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  } else {
    knots = times;
  }
  // Bisect widest intervals until the requested count is reached.
  while (static_cast<int>(knots.size()) < n_knots) {
    size_t widest = 0;
    for (size_t i = 1; i + 1 < knots.size(); ++i)
      if (knots[i + 1] - knots[i] > knots[widest + 1] - knots[widest]) widest = i;
    knots.insert(knots.begin() + widest + 1, 0.5 * (knots[widest] + knots[widest + 1]));
  }
  return knots;
}

namespace {

Polynomial hermite_piece(const VarSet& vs, double y0, double y1, double m0, double m1,
                         double dt) {
  // Cubic with p(0)=y0, p(1)=y1, dp/ds(0)=dt*m0, dp/ds(1)=dt*m1.
  double s0 = dt * m0, s1 = dt * m1;
  Polynomial p(vs);
  p.add_term(Monomial(std::vector<int>{0}), y0);
  p.add_term(Monomial(std::vector<int>{1}), s0);
  p.add_term(Monomial(std::vector<int>{2}), -3 * y0 - 2 * s0 + 3 * y1 - s1);
  p.add_term(Monomial(std::vector<int>{3}), 2 * y0 + s0 - 2 * y1 + s1);
  return p;
}

PiecewisePolynomial fit_component(const std::vector<double>& knots,
                                  const std::vector<double>& vals,
                                  const std::vector<double>& slopes, FitType type) {
  VarSet vs{true, 0, 0};
  std::vector<Polynomial> pieces;
  pieces.reserve(knots.size() - 1);
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    double dt = knots[i + 1] - knots[i];
    switch (type) {
      case FitType::kCubicHermite:
        pieces.push_back(hermite_piece(vs, vals[i], vals[i + 1], slopes[i], slopes[i + 1], dt));
        break;
      case FitType::kLinear: {
        Polynomial p(vs);
        p.add_term(Monomial(std::vector<int>{0}), vals[i]);
        p.add_term(Monomial(std::vector<int>{1}), vals[i + 1] - vals[i]);
        pieces.push_back(p);
        break;
      }
      case FitType::kZeroOrderHold:
        pieces.push_back(Polynomial::constant(vs, vals[i]));
        break;
    }
  }
  return PiecewisePolynomial(knots, std::move(pieces));
}

void check_knots(const std::vector<double>& knots) {
  if (knots.size() < 2) throw std::invalid_argument("fit: fewer than two knots");
  for (size_t i = 0; i + 1 < knots.size(); ++i)
    if (!(knots[i] < knots[i + 1]))
      throw std::invalid_argument("fit: knots must be strictly increasing");
}

}  // namespace

PolyMatrix fit_path(const SampledPath& path, const std::vector<double>& knots,
                    FitType type) {
  check_knots(knots);
  const int n = path.dim();
  std::vector<Eigen::VectorXd> vals, slopes;
  for (double t : knots) {
    vals.push_back(path.eval(t));
    slopes.push_back(path.eval_deriv(t));
  }
  std::vector<PiecewisePolynomial> entries;
  entries.reserve(n);
  for (int c = 0; c < n; ++c) {
    std::vector<double> v(knots.size()), s(knots.size());
    for (size_t i = 0; i < knots.size(); ++i) {
      v[i] = vals[i][c];
      s[i] = slopes[i][c];
    }
    entries.push_back(fit_component(knots, v, s, type));
  }
  return PolyMatrix(n, 1, std::move(entries));
}

PolyMatrix fit_matrix(const MatrixPath& path, const std::vector<double>& knots,
                      FitType type) {
  check_knots(knots);
  const int n = path.n();
  std::vector<Eigen::MatrixXd> vals, slopes;
  for (double t : knots) {
    vals.push_back(path.eval(t));
    slopes.push_back(path.eval_deriv(t));
  }
  std::vector<PiecewisePolynomial> entries(n * n);
  for (int r = 0; r < n; ++r) {
    for (int c = r; c < n; ++c) {
      std::vector<double> v(knots.size()), s(knots.size());
      for (size_t i = 0; i < knots.size(); ++i) {
        v[i] = vals[i](r, c);
        s[i] = slopes[i](r, c);
      }
      PiecewisePolynomial e = fit_component(knots, v, s, type);
      entries[r * n + c] = e;
      entries[c * n + r] = e;
    }
  }
  return PolyMatrix(n, n, std::move(entries), /*symmetric=*/true);
}

}  // namespace funnelcert
