#include "sdde/quadrature.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <queue>
#include <stdexcept>

namespace sdde::quad {

namespace {

// Boost stores the non-negative half of a symmetric rule.
template <class Half>
Rule expand(const Half& abscissa, const Half& weights, bool odd) {
  Rule rule;
  const std::size_t m = abscissa.size();
  for (std::size_t i = m; i-- > (odd ? 1u : 0u);) {
    rule.x.push_back(-abscissa[i]);
    rule.w.push_back(weights[i]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    rule.x.push_back(abscissa[i]);
    rule.w.push_back(weights[i]);
  }
  return rule;
}

template <unsigned N>
Rule gl_rule() {
  using G = boost::math::quadrature::gauss<double, N>;
  return expand(G::abscissa(), G::weights(), N % 2 == 1);
}

struct GK15 {
  Rule kronrod;
  std::vector<double> gauss_w;  // weights of the embedded 7-point rule, 0 at Kronrod-only nodes
};

const GK15& gk15() {
  static const GK15 rule = [] {
    using K = boost::math::quadrature::gauss_kronrod<double, 15>;
    using G = boost::math::quadrature::gauss<double, 7>;
    GK15 r;
    r.kronrod = expand(K::abscissa(), K::weights(), true);
    const Rule g = expand(G::abscissa(), G::weights(), true);
    r.gauss_w.assign(r.kronrod.x.size(), 0.0);
    for (std::size_t i = 0; i < g.x.size(); ++i) {
      for (std::size_t j = 0; j < r.kronrod.x.size(); ++j) {
        if (std::abs(r.kronrod.x[j] - g.x[i]) < 1e-14) r.gauss_w[j] = g.w[i];
      }
    }
    return r;
  }();
  return rule;
}

struct Panel {
  double lo, hi;
  Eigen::ArrayXd value;
  double error;
  bool operator<(const Panel& o) const { return error < o.error; }
};

Panel eval_panel(const std::function<Eigen::ArrayXd(double)>& f, int dim, double lo, double hi) {
  const GK15& rule = gk15();
  const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
  Eigen::ArrayXd k = Eigen::ArrayXd::Zero(dim), g = Eigen::ArrayXd::Zero(dim);
  for (std::size_t j = 0; j < rule.kronrod.x.size(); ++j) {
    const Eigen::ArrayXd fx = f(c + h * rule.kronrod.x[j]);
    k += rule.kronrod.w[j] * fx;
    if (rule.gauss_w[j] != 0.0) g += rule.gauss_w[j] * fx;
  }
  k *= h;
  g *= h;
  return {lo, hi, k, (k - g).abs().maxCoeff()};
}

}  // namespace

const Rule& gauss_legendre(int n) {
  static const Rule r7 = gl_rule<7>(), r10 = gl_rule<10>(), r15 = gl_rule<15>(),
                    r20 = gl_rule<20>(), r25 = gl_rule<25>(), r30 = gl_rule<30>();
  switch (n) {
    case 7: return r7;
    case 10: return r10;
    case 15: return r15;
    case 20: return r20;
    case 25: return r25;
    case 30: return r30;
    default: throw std::invalid_argument("unsupported Gauss-Legendre order");
  }
}

double integrate_gl(const std::function<double(double)>& f, double lo, double hi, int n) {
  const Rule& rule = gauss_legendre(n);
  const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.x.size(); ++i) s += rule.w[i] * f(c + h * rule.x[i]);
  return h * s;
}

VectorIntegral integrate_gk15(const std::function<Eigen::ArrayXd(double)>& f, int dim, double lo,
                              double hi, double max_width, double tol, int max_panels) {
  const int n0 = std::max(1, static_cast<int>(std::ceil((hi - lo) / max_width)));
  std::priority_queue<Panel> heap;
  VectorIntegral out;
  out.value = Eigen::ArrayXd::Zero(dim);
  double err = 0.0, settled_err = 0.0;
  // Panels already well inside their share of the budget are summed at once
  // so memory stays proportional to the panels that still need work.
  const double share = 0.5 * tol / n0;
  for (int i = 0; i < n0; ++i) {
    const double a = lo + (hi - lo) * i / n0;
    const double b = (i + 1 == n0) ? hi : lo + (hi - lo) * (i + 1) / n0;
    Panel p = eval_panel(f, dim, a, b);
    err += p.error;
    if (p.error <= share) {
      out.value += p.value;
      settled_err += p.error;
    } else {
      heap.push(std::move(p));
    }
  }
  int panels = n0;
  while (err > tol && panels < max_panels && !heap.empty()) {
    Panel worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.lo + worst.hi);
    Panel left = eval_panel(f, dim, worst.lo, mid);
    Panel right = eval_panel(f, dim, mid, worst.hi);
    err += left.error + right.error - worst.error;
    heap.push(std::move(left));
    heap.push(std::move(right));
    ++panels;
  }
  // Re-sum so the accumulated estimate carries no drift from the updates.
  err = settled_err;
  while (!heap.empty()) {
    out.value += heap.top().value;
    err += heap.top().error;
    heap.pop();
  }
  out.error = err;
  out.panels = panels;
  return out;
}

ChebyshevPiece::ChebyshevPiece(double lo, double hi, int n) : lo_(lo), hi_(hi) {
  if (n < 2) throw std::invalid_argument("Chebyshev piece needs at least two nodes");
  nodes_.resize(n);
  values_.assign(n, 0.0);
  for (int j = 0; j < n; ++j) {
    const double x = -std::cos(std::numbers::pi * j / (n - 1));
    nodes_[j] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
  }
  nodes_.front() = lo;
  nodes_.back() = hi;
}

double ChebyshevPiece::operator()(double t) const {
  const int n = static_cast<int>(nodes_.size());
  double num = 0.0, den = 0.0;
  for (int j = 0; j < n; ++j) {
    const double d = t - nodes_[j];
    if (d == 0.0) return values_[j];
    double w = (j % 2 == 0) ? 1.0 : -1.0;
    if (j == 0 || j == n - 1) w *= 0.5;
    w /= d;
    num += w * values_[j];
    den += w;
  }
  return num / den;
}

}  // namespace sdde::quad
