#include "funnelcert/poly.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace funnelcert {

std::string VarSet::name(int v) const {
  if (has_time && v == 0) return "t";
  int k = v - (has_time ? 1 : 0);
  char buf[16];
  if (k < n_states) {
    std::snprintf(buf, sizeof(buf), "x%d", k + 1);
  } else {
    std::snprintf(buf, sizeof(buf), "u%d", k - n_states + 1);
  }
  return buf;
}

int Monomial::degree() const {
  return std::accumulate(exp.begin(), exp.end(), 0);
}

double Monomial::eval(std::span<const double> point) const {
  double v = 1.0;
  for (size_t i = 0; i < exp.size(); ++i) {
    for (int k = 0; k < exp[i]; ++k) v *= point[i];
  }
  return v;
}

bool monomial_less(const Monomial& a, const Monomial& b) {
  int da = a.degree(), db = b.degree();
  if (da != db) return da < db;
  return a.exp < b.exp;
}

Polynomial Polynomial::constant(const VarSet& vars, double c) {
  Polynomial p(vars);
  p.add_term(Monomial(vars.size()), c);
  return p;
}

Polynomial Polynomial::variable(const VarSet& vars, int v) {
  Monomial m(vars.size());
  m.exp[v] = 1;
  return term(vars, m, 1.0);
}

Polynomial Polynomial::term(const VarSet& vars, const Monomial& m, double c) {
  Polynomial p(vars);
  p.add_term(m, c);
  return p;
}

int Polynomial::total_degree() const {
  // Canonical order puts the highest-degree terms last.
  return terms_.empty() ? 0 : terms_.rbegin()->first.degree();
}

int Polynomial::degree_in(int v) const {
  int d = 0;
  for (const auto& [m, c] : terms_) d = std::max(d, m.exp[v]);
  return d;
}

double Polynomial::coeff(const Monomial& m) const {
  auto it = terms_.find(m);
  return it == terms_.end() ? 0.0 : it->second;
}

double Polynomial::max_abs_coeff() const {
  double v = 0.0;
  for (const auto& [m, c] : terms_) v = std::max(v, std::fabs(c));
  return v;
}

void Polynomial::add_term(const Monomial& m, double c) {
  if (static_cast<int>(m.exp.size()) != vars_.size())
    throw std::invalid_argument("add_term: exponent count does not match variable set");
  for (int e : m.exp)
    if (e < 0) throw std::invalid_argument("add_term: negative exponent");
  auto [it, inserted] = terms_.emplace(m, c);
  if (!inserted) it->second += c;
  if (std::fabs(it->second) < kCoeffTol) terms_.erase(it);
}

void Polynomial::prune() {
  for (auto it = terms_.begin(); it != terms_.end();) {
    if (std::fabs(it->second) < kCoeffTol)
      it = terms_.erase(it);
    else
      ++it;
  }
}

Polynomial& Polynomial::operator+=(const Polynomial& rhs) {
  if (!(vars_ == rhs.vars_))
    throw std::invalid_argument("polynomial arithmetic on mismatched variable sets");
  for (const auto& [m, c] : rhs.terms_) add_term(m, c);
  return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& rhs) {
  if (!(vars_ == rhs.vars_))
    throw std::invalid_argument("polynomial arithmetic on mismatched variable sets");
  for (const auto& [m, c] : rhs.terms_) add_term(m, -c);
  return *this;
}

Polynomial& Polynomial::operator*=(double c) {
  for (auto& [m, v] : terms_) v *= c;
  prune();
  return *this;
}

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
  if (!(a.vars_ == b.vars_))
    throw std::invalid_argument("polynomial arithmetic on mismatched variable sets");
  Polynomial out(a.vars_);
  const int n = a.vars_.size();
  Monomial sum(n);
  for (const auto& [ma, ca] : a.terms_) {
    for (const auto& [mb, cb] : b.terms_) {
      for (int i = 0; i < n; ++i) sum.exp[i] = ma.exp[i] + mb.exp[i];
      auto [it, inserted] = out.terms_.emplace(sum, ca * cb);
      if (!inserted) it->second += ca * cb;
    }
  }
  out.prune();
  return out;
}

Polynomial Polynomial::operator-() const {
  Polynomial out(*this);
  for (auto& [m, c] : out.terms_) c = -c;
  return out;
}

Polynomial Polynomial::diff(int v) const {
  Polynomial out(vars_);
  for (const auto& [m, c] : terms_) {
    if (m.exp[v] == 0) continue;
    Monomial d = m;
    d.exp[v] -= 1;
    out.add_term(d, c * m.exp[v]);
  }
  return out;
}

double Polynomial::eval(std::span<const double> point) const {
  if (static_cast<int>(point.size()) != vars_.size())
    throw std::invalid_argument("eval: point dimension does not match variable set");
  double acc = 0.0;
  for (const auto& [m, c] : terms_) acc += c * m.eval(point);
  return acc;
}

Polynomial Polynomial::partial_eval(int v, double c) const {
  Polynomial out(vars_);
  for (const auto& [m, coef] : terms_) {
    double scale = 1.0;
    for (int k = 0; k < m.exp[v]; ++k) scale *= c;
    Monomial r = m;
    r.exp[v] = 0;
    out.add_term(r, coef * scale);
  }
  return out;
}

Polynomial Polynomial::subst(const VarSet& target,
                             const std::vector<Polynomial>& replacement) const {
  if (replacement.size() != static_cast<size_t>(vars_.size()))
    throw std::invalid_argument("subst: one replacement per source variable required");
  for (const auto& r : replacement)
    if (!(r.vars() == target))
      throw std::invalid_argument("subst: replacement over wrong variable set");
  // Power cache per source variable, filled on demand.
  std::vector<std::vector<Polynomial>> powers(vars_.size());
  auto power = [&](int v, int e) -> const Polynomial& {
    auto& cache = powers[v];
    if (cache.empty()) cache.push_back(Polynomial::constant(target, 1.0));
    while (static_cast<int>(cache.size()) <= e)
      cache.push_back(cache.back() * replacement[v]);
    return cache[e];
  };
  Polynomial out(target);
  for (const auto& [m, c] : terms_) {
    Polynomial term = Polynomial::constant(target, c);
    for (int v = 0; v < vars_.size(); ++v)
      if (m.exp[v] > 0) term = term * power(v, m.exp[v]);
    out += term;
  }
  return out;
}

Polynomial Polynomial::drop_time() const {
  if (!vars_.has_time) return *this;
  VarSet tgt = vars_;
  tgt.has_time = false;
  Polynomial out(tgt);
  for (const auto& [m, c] : terms_) {
    if (m.exp[0] != 0)
      throw std::invalid_argument("drop_time: nonzero time exponent present");
    out.add_term(Monomial(std::vector<int>(m.exp.begin() + 1, m.exp.end())), c);
  }
  return out;
}

std::string Polynomial::to_string() const {
  if (terms_.empty()) return "0";
  std::string s;
  for (const auto& [m, c] : terms_) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%.12g", s.empty() ? "" : " + ", c);
    s += buf;
    for (int v = 0; v < vars_.size(); ++v) {
      if (m.exp[v] == 0) continue;
      s += "*" + vars_.name(v);
      if (m.exp[v] > 1) {
        std::snprintf(buf, sizeof(buf), "^%d", m.exp[v]);
        s += buf;
      }
    }
  }
  return s;
}

PiecewisePolynomial::PiecewisePolynomial(std::vector<double> knots,
                                         std::vector<Polynomial> pieces)
    : knots_(std::move(knots)), pieces_(std::move(pieces)) {
  if (knots_.size() != pieces_.size() + 1 || pieces_.empty())
    throw std::invalid_argument("piecewise polynomial needs knots = pieces + 1");
  for (size_t i = 0; i + 1 < knots_.size(); ++i)
    if (!(knots_[i] < knots_[i + 1]))
      throw std::invalid_argument("piecewise polynomial knots must increase");
  for (const auto& p : pieces_)
    if (!(p.vars() == pieces_.front().vars()))
      throw std::invalid_argument("piecewise polynomial pieces on mismatched variable sets");
}

int PiecewisePolynomial::piece_index(double t) const {
  if (t >= knots_.back()) return n_pieces() - 1;
  if (t <= knots_.front()) return 0;
  int lo = 0, hi = n_pieces() - 1;
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (t < knots_[mid + 1])
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

double PiecewisePolynomial::eval(double t) const {
  int i = piece_index(t);
  std::vector<double> pt(vars().size(), 0.0);
  pt[0] = local_coord(i, t);
  return pieces_[i].eval(pt);
}

double PiecewisePolynomial::eval(double t, std::span<const double> x) const {
  int i = piece_index(t);
  std::vector<double> pt(vars().size(), 0.0);
  pt[0] = local_coord(i, t);
  for (size_t k = 0; k < x.size(); ++k) pt[1 + k] = x[k];
  return pieces_[i].eval(pt);
}

PiecewisePolynomial PiecewisePolynomial::derivative_time() const {
  const int tv = vars().time_index();
  if (tv < 0) throw std::invalid_argument("derivative_time: no time variable");
  std::vector<Polynomial> dp;
  dp.reserve(pieces_.size());
  for (int i = 0; i < n_pieces(); ++i) dp.push_back(pieces_[i].diff(tv) * (1.0 / dt(i)));
  return PiecewisePolynomial(knots_, std::move(dp));
}

double PiecewisePolynomial::integrate() const {
  // Exact per piece: dt * sum_k c_k / (k + 1) over s^k terms.
  double acc = 0.0;
  for (int i = 0; i < n_pieces(); ++i) {
    double piece_acc = 0.0;
    for (const auto& [m, c] : pieces_[i].terms()) {
      if (m.degree() != m.exp[0])
        throw std::invalid_argument("integrate: time-only pieces required");
      piece_acc += c / (m.exp[0] + 1);
    }
    acc += piece_acc * dt(i);
  }
  return acc;
}

double PiecewisePolynomial::max_knot_jump() const {
  double worst = 0.0;
  std::vector<double> at_one(vars().size(), 0.0), at_zero(vars().size(), 0.0);
  at_one[0] = 1.0;
  for (int i = 0; i + 1 < n_pieces(); ++i) {
    double jump = pieces_[i].eval(at_one) - pieces_[i + 1].eval(at_zero);
    worst = std::max(worst, std::fabs(jump));
  }
  return worst;
}

PolyMatrix::PolyMatrix(int rows, int cols, std::vector<PiecewisePolynomial> entries,
                       bool symmetric)
    : rows_(rows), cols_(cols), symmetric_(symmetric), entries_(std::move(entries)) {
  if (static_cast<int>(entries_.size()) != rows_ * cols_)
    throw std::invalid_argument("PolyMatrix: entry count mismatch");
  for (const auto& e : entries_)
    if (e.knots() != entries_.front().knots())
      throw std::invalid_argument("PolyMatrix: entries must share one knot grid");
}

const PiecewisePolynomial& PolyMatrix::at(int r, int c) const {
  return entries_[r * cols_ + c];
}

const std::vector<double>& PolyMatrix::knots() const {
  return entries_.front().knots();
}

std::vector<double> PolyMatrix::eval(double t) const {
  std::vector<double> out(entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i) out[i] = entries_[i].eval(t);
  return out;
}

}  // namespace funnelcert
