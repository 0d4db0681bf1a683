#include "funnelcert/tvlqr.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace funnelcert {

ControlledDynamics::ControlledDynamics(std::vector<Polynomial> f0, int n_states,
                                       int n_inputs)
    : f0_(std::move(f0)), n_(n_states), m_(n_inputs) {
  if (n_ <= 0 || m_ < 0) throw std::invalid_argument("ControlledDynamics: bad dimensions");
  if (static_cast<int>(f0_.size()) != n_)
    throw std::invalid_argument("ControlledDynamics: one component per state required");
  const VarSet expected{false, n_, m_};
  for (const auto& c : f0_)
    if (!(c.vars() == expected))
      throw std::invalid_argument("ControlledDynamics: component over wrong variable set");
}

Eigen::VectorXd ControlledDynamics::eval(const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& u) const {
  if (x.size() != n_ || u.size() != m_)
    throw std::invalid_argument("ControlledDynamics::eval: dimension mismatch");
  std::vector<double> pt(n_ + m_);
  for (int k = 0; k < n_; ++k) pt[k] = x[k];
  for (int k = 0; k < m_; ++k) pt[n_ + k] = u[k];
  Eigen::VectorXd out(n_);
  for (int c = 0; c < n_; ++c) out[c] = f0_[c].eval(pt);
  return out;
}

Linearization linearize(const ControlledDynamics& sys, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& u) {
  const int n = sys.n(), m = sys.m();
  if (x.size() != n || u.size() != m)
    throw std::invalid_argument("linearize: dimension mismatch");
  const VarSet& vs = sys.vars();
  std::vector<double> pt(n + m);
  for (int k = 0; k < n; ++k) pt[k] = x[k];
  for (int k = 0; k < m; ++k) pt[n + k] = u[k];
  Linearization lin;
  lin.A.resize(n, n);
  lin.B.resize(n, m);
  for (int c = 0; c < n; ++c) {
    for (int k = 0; k < n; ++k) lin.A(c, k) = sys.f0()[c].diff(vs.state_index(k)).eval(pt);
    for (int k = 0; k < m; ++k) lin.B(c, k) = sys.f0()[c].diff(vs.input_index(k)).eval(pt);
  }
  return lin;
}

GainSchedule tvlqr_gain(const MatrixPath& S,
                        const std::function<Eigen::MatrixXd(double)>& B,
                        const Eigen::MatrixXd& R) {
  if (R.rows() != R.cols()) throw std::invalid_argument("tvlqr_gain: R must be square");
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("tvlqr_gain: R is not positive definite");
  GainSchedule sched;
  sched.times = S.times();
  sched.gains.reserve(sched.times.size());
  for (size_t i = 0; i < sched.times.size(); ++i) {
    const double t = sched.times[i];
    const Eigen::MatrixXd Bt = B(t);
    if (Bt.rows() != S.n() || Bt.cols() != R.rows())
      throw std::invalid_argument("tvlqr_gain: B dimension mismatch");
    sched.gains.push_back(llt.solve(Bt.transpose() * S.value_at(static_cast<int>(i))));
  }
  return sched;
}

namespace {

// Index of the last schedule time <= t (clamped to the first sample).
int left_sample(const std::vector<double>& times, double t) {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  return std::max(0, static_cast<int>(it - times.begin()) - 1);
}

}  // namespace

PolyMatrix fit_gain_zoh(const GainSchedule& sched, const std::vector<double>& knots) {
  if (sched.times.empty()) throw std::invalid_argument("fit_gain_zoh: empty schedule");
  if (knots.size() < 2) throw std::invalid_argument("fit_gain_zoh: fewer than two knots");
  const int m = static_cast<int>(sched.gains.front().rows());
  const int n = static_cast<int>(sched.gains.front().cols());
  const VarSet ts{true, 0, 0};
  std::vector<int> hold(knots.size() - 1);
  for (size_t i = 0; i + 1 < knots.size(); ++i) hold[i] = left_sample(sched.times, knots[i]);
  std::vector<PiecewisePolynomial> entries;
  entries.reserve(m * n);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) {
      std::vector<Polynomial> pieces;
      pieces.reserve(hold.size());
      for (size_t i = 0; i < hold.size(); ++i)
        pieces.push_back(Polynomial::constant(ts, sched.gains[hold[i]](r, c)));
      entries.emplace_back(knots, std::move(pieces));
    }
  }
  return PolyMatrix(m, n, std::move(entries));
}

PolyMatrix to_piecewise(const std::vector<Polynomial>& entries, int rows, int cols,
                        const std::vector<double>& knots) {
  if (static_cast<int>(entries.size()) != rows * cols)
    throw std::invalid_argument("to_piecewise: entry count mismatch");
  if (knots.size() < 2) throw std::invalid_argument("to_piecewise: fewer than two knots");
  const VarSet ts{true, 0, 0};
  for (const auto& e : entries)
    if (!(e.vars() == ts))
      throw std::invalid_argument("to_piecewise: entries must be time-only polynomials");
  // Local-coordinate substitutions t = knots[i] + dt_i * s, one per piece.
  std::vector<std::vector<Polynomial>> repl;
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    Polynomial t_of_s = Polynomial::constant(ts, knots[i]);
    t_of_s.add_term(Monomial(std::vector<int>{1}), knots[i + 1] - knots[i]);
    repl.push_back({std::move(t_of_s)});
  }
  std::vector<PiecewisePolynomial> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    std::vector<Polynomial> pieces;
    pieces.reserve(repl.size());
    for (const auto& r : repl) pieces.push_back(e.subst(ts, r));
    out.emplace_back(knots, std::move(pieces));
  }
  return PolyMatrix(rows, cols, std::move(out));
}

Eigen::VectorXd FeedbackPolicy::eval(double t, const Eigen::VectorXd& x) const {
  const int m = u0.rows();
  const int n = xhat0.rows();
  if (x.size() != n) throw std::invalid_argument("FeedbackPolicy::eval: dimension mismatch");
  const std::vector<double> u0v = u0.eval(t);
  const std::vector<double> kv = Khat.eval(t);
  const std::vector<double> x0v = xhat0.eval(t);
  Eigen::VectorXd u(m);
  for (int j = 0; j < m; ++j) {
    double acc = u0v[j];
    for (int k = 0; k < n; ++k) acc -= kv[j * n + k] * (x[k] - x0v[k]);
    u[j] = acc;
  }
  return u;
}

SystemDynamics::SystemDynamics(std::vector<PiecewisePolynomial> f) : f_(std::move(f)) {
  if (f_.empty()) throw std::invalid_argument("SystemDynamics: no components");
  const int n = static_cast<int>(f_.size());
  const VarSet expected{true, n, 0};
  for (const auto& c : f_) {
    if (!(c.vars() == expected))
      throw std::invalid_argument("SystemDynamics: component over wrong variable set");
    if (c.knots() != f_.front().knots())
      throw std::invalid_argument("SystemDynamics: components must share one knot grid");
  }
}

Eigen::VectorXd SystemDynamics::eval(double t, const Eigen::VectorXd& x) const {
  if (x.size() != n()) throw std::invalid_argument("SystemDynamics::eval: dimension mismatch");
  std::vector<double> xv(x.data(), x.data() + x.size());
  Eigen::VectorXd out(n());
  for (int c = 0; c < n(); ++c) out[c] = f_[c].eval(t, xv);
  return out;
}

Field SystemDynamics::field() const {
  return [sys = *this](double t, const Eigen::VectorXd& x) { return sys.eval(t, x); };
}

SystemDynamics close_loop(const ControlledDynamics& sys, const FeedbackPolicy& policy) {
  const int n = sys.n(), m = sys.m();
  if (policy.u0.rows() != m || policy.u0.cols() != 1)
    throw std::invalid_argument("close_loop: u0 must be m-by-1");
  if (policy.Khat.rows() != m || policy.Khat.cols() != n)
    throw std::invalid_argument("close_loop: Khat must be m-by-n");
  if (policy.xhat0.rows() != n || policy.xhat0.cols() != 1)
    throw std::invalid_argument("close_loop: xhat0 must be n-by-1");
  const std::vector<double>& knots = policy.xhat0.knots();
  if ((m > 0 && (policy.u0.knots() != knots || policy.Khat.knots() != knots)))
    throw std::invalid_argument("close_loop: policy parts must share one knot grid");

  const VarSet target{true, n, 0};
  auto lift = [&](const Polynomial& time_only) {
    return time_only.subst(target, {Polynomial::variable(target, 0)});
  };

  const int n_pieces = static_cast<int>(knots.size()) - 1;
  std::vector<std::vector<Polynomial>> pieces(n, std::vector<Polynomial>());
  for (int i = 0; i < n_pieces; ++i) {
    // pi(s, x) for this piece, one polynomial per input.
    std::vector<Polynomial> repl;
    repl.reserve(n + m);
    for (int k = 0; k < n; ++k)
      repl.push_back(Polynomial::variable(target, target.state_index(k)));
    for (int j = 0; j < m; ++j) {
      Polynomial pj = lift(policy.u0.at(j, 0).piece(i));
      for (int k = 0; k < n; ++k) {
        Polynomial dev = Polynomial::variable(target, target.state_index(k)) -
                         lift(policy.xhat0.at(k, 0).piece(i));
        pj -= lift(policy.Khat.at(j, k).piece(i)) * dev;
      }
      repl.push_back(std::move(pj));
    }
    for (int c = 0; c < n; ++c) pieces[c].push_back(sys.f0()[c].subst(target, repl));
  }
  std::vector<PiecewisePolynomial> f;
  f.reserve(n);
  for (int c = 0; c < n; ++c) f.emplace_back(knots, std::move(pieces[c]));
  return SystemDynamics(std::move(f));
}

}  // namespace funnelcert
