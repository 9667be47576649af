#include "sdde/autocov.hpp"

#include "sdde/errors.hpp"
#include "sdde/roots.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <set>
#include <stdexcept>

namespace sdde {

namespace {

constexpr int kChebNodes = 25;
constexpr int kGaussOrder = 30;

// c(t) = cosh(sqrt(mu) t), s(t) = sinh(sqrt(mu) t)/sqrt(mu), continued to mu <= 0.
void cs(double mu, double t, double& c, double& s) {
  const double x = mu * t * t;
  if (std::abs(x) < 0.5) {
    double term_c = 1.0, term_s = t;
    c = term_c;
    s = term_s;
    for (int n = 1; n < 30; ++n) {
      term_c *= x / ((2.0 * n - 1) * (2.0 * n));
      term_s *= x / ((2.0 * n) * (2.0 * n + 1));
      c += term_c;
      s += term_s;
      if (std::abs(term_c) < 1e-18 * std::abs(c) && std::abs(term_s) < 1e-18 * std::abs(s)) break;
    }
    return;
  }
  if (mu > 0) {
    const double l = std::sqrt(mu);
    c = std::cosh(l * t);
    s = std::sinh(l * t) / l;
  } else {
    const double l = std::sqrt(-mu);
    c = std::cos(l * t);
    s = std::sin(l * t) / l;
  }
}

void require_two_delay_stationary(const TwoDelay& m) {
  validate(m);
  const auto v = is_stationary(m);
  if (!v.stationary()) throw NonStationaryError("two-delay model is not stationary: " + v.detail);
}

// Points t where K has a jump in its first, second or third derivative.
std::vector<double> kink_points(const DelayModelSpec& model) {
  std::set<double> out{0.0};
  if (const auto* e = std::get_if<ExpKernel>(&model)) {
    if (std::isfinite(e->r)) {
      out.insert(e->r);
      out.insert(2 * e->r);
    }
    return {out.begin(), out.end()};
  }
  MultiDelay md = std::holds_alternative<TwoDelay>(model) ? to_multi_delay(std::get<TwoDelay>(model))
                                                          : std::get<MultiDelay>(model);
  std::vector<double> d;
  for (std::size_t k = 0; k < md.delays.size(); ++k)
    if (md.delays[k] > 0 && md.alphas[k] != 0.0) d.push_back(md.delays[k]);
  for (double x : d) {
    out.insert(x);
    for (double y : d) {
      out.insert(x + y);
      for (double z : d) out.insert(x + y + z);
    }
  }
  return {out.begin(), out.end()};
}

bool kink_in(const std::vector<double>& kinks, double lo, double hi) {
  for (double k : kinks)
    if (k > lo && k < hi) return true;
  return false;
}

// Abscissae and weights of an integral of K over the delay measure, evaluated
// at shift t: int g(t + s) a(ds) = sum_i w_i g(x_i).
void delay_measure_rule(const DelayModelSpec& model, double t, std::vector<double>& x,
                        std::vector<double>& w) {
  if (const auto* e = std::get_if<ExpKernel>(&model)) {
    double lo = std::isfinite(e->r) ? -e->r : -(37.0 + 1.0) / e->a;
    std::set<double> breaks{lo, 0.0};
    for (double shift : {0.0, e->r, -e->r, 2 * e->r, -2 * e->r}) {
      const double s = shift - t;
      if (std::isfinite(s) && s > lo && s < 0) breaks.insert(s);
    }
    // Panels no wider than 0.5 keep the fixed rule accurate for decaying K.
    std::vector<double> b(breaks.begin(), breaks.end());
    const auto& rule = quad::gauss_legendre(kGaussOrder);
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
      const int sub = std::max(1, static_cast<int>(std::ceil((b[i + 1] - b[i]) / 0.5)));
      for (int q = 0; q < sub; ++q) {
        const double lo_q = b[i] + (b[i + 1] - b[i]) * q / sub;
        const double hi_q = b[i] + (b[i + 1] - b[i]) * (q + 1) / sub;
        const double c = 0.5 * (lo_q + hi_q), h = 0.5 * (hi_q - lo_q);
        for (std::size_t j = 0; j < rule.x.size(); ++j) {
          const double s = c + h * rule.x[j];
          x.push_back(t + s);
          w.push_back(-e->b * std::exp(e->a * s) * h * rule.w[j]);
        }
      }
    }
    return;
  }
  MultiDelay md = std::holds_alternative<TwoDelay>(model) ? to_multi_delay(std::get<TwoDelay>(model))
                                                          : std::get<MultiDelay>(model);
  for (std::size_t k = 0; k < md.alphas.size(); ++k) {
    x.push_back(t - md.delays[k]);
    w.push_back(md.alphas[k]);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// AutocovGrid

Eigen::MatrixXd AutocovGrid::toeplitz(int l) const {
  if (l > m() + 1) throw CoverageError("autocovariance grid too short for Toeplitz order");
  Eigen::MatrixXd t(l, l);
  for (int i = 0; i < l; ++i)
    for (int j = 0; j < l; ++j) t(i, j) = at(i - j);
  return t;
}

Eigen::VectorXd AutocovGrid::kappa(int l) const {
  if (l > m()) throw CoverageError("autocovariance grid too short for lag vector");
  return values.segment(1, l);
}

Eigen::MatrixXd AutocovGrid::toeplitz_grad(int param, int l) const {
  if (l > m() + 1) throw CoverageError("autocovariance grid too short for Toeplitz order");
  Eigen::MatrixXd t(l, l);
  for (int i = 0; i < l; ++i)
    for (int j = 0; j < l; ++j) t(i, j) = grads(param, std::abs(i - j));
  return t;
}

Eigen::VectorXd AutocovGrid::kappa_grad(int param, int l) const {
  if (l > m()) throw CoverageError("autocovariance grid too short for lag vector");
  return grads.row(param).segment(1, l).transpose();
}

// ---------------------------------------------------------------------------
// Two-delay closed form and continuation

TwoDelayCovariance::TwoDelayCovariance(const TwoDelay& model)
    : m_(model), lock_(std::make_unique<std::mutex>()) {
  require_two_delay_stationary(m_);
  mu_ = m_.a * m_.a - m_.b * m_.b;
  double c, s;
  cs(mu_, m_.r, c, s);
  const double s2 = m_.sigma * m_.sigma;
  k0_ = s2 * (m_.b * s - 1.0) / (2.0 * (m_.a + m_.b * c));
  const double rate = std::max({std::abs(m_.a), std::abs(m_.b), 1.0});
  pieces_per_interval_ = std::max(1, static_cast<int>(std::ceil(m_.r * rate / 2.0)));
}

double TwoDelayCovariance::base(double t) const {
  double c, s;
  cs(mu_, t, c, s);
  return k0_ * c - 0.5 * m_.sigma * m_.sigma * s;
}

double TwoDelayCovariance::on_interval(int n, double t) const {
  if (n == 0) return base(t);
  const auto& pieces = intervals_[n - 1].pieces;
  const double width = m_.r / pieces_per_interval_;
  int q = static_cast<int>(std::floor((t - n * m_.r) / width));
  q = std::clamp(q, 0, pieces_per_interval_ - 1);
  return pieces[q](t);
}

void TwoDelayCovariance::extend_to(int n) const {
  const auto& rule = quad::gauss_legendre(kGaussOrder);
  const int P = pieces_per_interval_;
  const double width = m_.r / P;
  while (static_cast<int>(intervals_.size()) < n) {
    const int j = static_cast<int>(intervals_.size()) + 1;
    Interval iv;
    double start_value = on_interval(j - 1, j * m_.r);
    for (int q = 0; q < P; ++q) {
      const double ps = j * m_.r + q * width;
      const double pe = (q + 1 == P) ? (j + 1) * m_.r : ps + width;
      quad::ChebyshevPiece piece(ps, pe, kChebNodes);
      for (int i = 0; i < kChebNodes; ++i) {
        const double t = piece.nodes()[i];
        double integral = 0.0;
        if (t > ps) {
          const double c = 0.5 * (ps + t), h = 0.5 * (t - ps);
          for (std::size_t g = 0; g < rule.x.size(); ++g) {
            const double s = c + h * rule.x[g];
            integral += rule.w[g] * std::exp(m_.a * (t - s)) * on_interval(j - 1, s - m_.r);
          }
          integral *= h;
        }
        piece.values()[i] = std::exp(m_.a * (t - ps)) * start_value + m_.b * integral;
      }
      start_value = piece.values().back();
      iv.pieces.push_back(std::move(piece));
    }
    intervals_.push_back(std::move(iv));
  }
}

double TwoDelayCovariance::operator()(double t) const {
  t = std::abs(t);
  if (t <= m_.r) return base(t);
  if (!std::isfinite(t)) throw std::invalid_argument("lag must be finite");
  const int n = std::max(1, static_cast<int>(std::ceil(t / m_.r)) - 1);
  std::lock_guard<std::mutex> guard(*lock_);
  extend_to(n);
  return on_interval(n, t);
}

double closed_form_two_delay(const TwoDelay& model, double t) {
  return TwoDelayCovariance(model)(t);
}

double closed_form_zero_a(const TwoDelay& model, double t) {
  if (model.a != 0.0) throw std::invalid_argument("closed_form_zero_a requires a = 0");
  require_two_delay_stationary(model);
  const double r = model.r, b = model.b;
  if (!(t >= 0.0 && t <= 2 * r * (1 + 1e-14)))
    throw std::invalid_argument("closed_form_zero_a is defined on [0, 2r]");
  const double scale = -model.sigma * model.sigma / (2 * b);
  const double br = b * r, bt = b * t;
  if (t <= r) return scale * ((1 - std::sin(br)) / std::cos(br) * std::cos(bt) + std::sin(bt));
  return scale * (2 + std::cos(bt) * ((std::tan(bt) - std::tan(br)) * (1 - 2 * std::sin(br)) -
                                      1 / std::cos(br)));
}

double closed_form_expkernel_a0(const ExpKernel& model, double t) {
  validate(model);
  if (model.a != 0.0) throw std::invalid_argument("closed_form_expkernel_a0 requires a = 0");
  const auto v = is_stationary(model);
  if (!v.stationary()) throw NonStationaryError("uniform-kernel model is not stationary: " + v.detail);
  const double r = model.r, b = model.b;
  if (!(t >= 0.0 && t <= r * (1 + 1e-14)))
    throw std::invalid_argument("closed_form_expkernel_a0 is defined on [0, r]");
  const double s2 = model.sigma * model.sigma;
  const double w = std::sqrt(2 * b);
  return s2 * std::sin(w * (r / 2 - t)) / (2 * w * std::cos(r * std::sqrt(b / 2))) +
         s2 / (2 * b * r);
}

// (X, Y) with Y(t) = int_{-inf}^0 X(t+s) e^{a s} ds is the OU system
// d(X, Y) = B (X, Y) dt + (sigma dW, 0), B = [[0, -b], [1, -a]]. K(t) is the
// (1, 1) entry of e^{B t} Sigma with Sigma from the Lyapunov equation.
double closed_form_expkernel_inf(const ExpKernel& model, double t) {
  validate(model);
  if (!std::isinf(model.r)) throw std::invalid_argument("closed_form_expkernel_inf requires r = infinity");
  if (!(model.a > 0)) throw NonStationaryError("infinite exponential kernel needs a > 0");
  const double a = model.a, b = model.b, s2 = model.sigma * model.sigma;
  const double p = s2 * (b + a * a) / (2 * a * b);
  t = std::abs(t);
  const double d2 = a * a / 4 - b;
  double c, s;
  if (std::abs(d2) * t * t < 1e-12) {
    c = 1 + d2 * t * t / 2;
    s = t * (1 + d2 * t * t / 6);
  } else if (d2 > 0) {
    const double d = std::sqrt(d2);
    c = std::cosh(d * t);
    s = std::sinh(d * t) / d;
  } else {
    const double w = std::sqrt(-d2);
    c = std::cos(w * t);
    s = std::sin(w * t) / w;
  }
  return std::exp(-a * t / 2) * (c * p + s * (a * p / 2 - s2 / 2));
}

// ---------------------------------------------------------------------------
// Grids

void require_stationary(const DelayModelSpec& model) {
  validate(model);
  RootTestOptions opt;
  opt.compute_margin = false;
  const auto v = is_stationary(model, opt);
  if (v.stationary()) return;
  if (v.verdict == Verdict::NotStationary)
    throw NonStationaryError("model is not stationary: " + v.detail);
  if (std::holds_alternative<ExpKernel>(model)) {
    const auto count = roots::count_roots_right_of(model, -opt.strip);
    if (count && *count == 0) return;
  }
  throw NonStationaryError("stationarity cannot be certified: " + v.detail);
}

BatchCovFn covariance_function(const DelayModelSpec& model) {
  std::optional<TwoDelay> td;
  if (const auto* t = std::get_if<TwoDelay>(&model)) td = *t;
  if (const auto* md = std::get_if<MultiDelay>(&model)) td = to_two_delay(*md);
  if (td) {
    auto cov = std::make_shared<TwoDelayCovariance>(*td);
    return [cov](const Eigen::VectorXd& t) {
      Eigen::VectorXd out(t.size());
      for (Eigen::Index i = 0; i < t.size(); ++i) out(i) = (*cov)(t(i));
      return out;
    };
  }
  if (const auto* e = std::get_if<ExpKernel>(&model); e && std::isinf(e->r)) {
    require_stationary(model);
    return [m = *e](const Eigen::VectorXd& t) {
      Eigen::VectorXd out(t.size());
      for (Eigen::Index i = 0; i < t.size(); ++i) out(i) = closed_form_expkernel_inf(m, t(i));
      return out;
    };
  }
  require_stationary(model);
  return [model](const Eigen::VectorXd& t) { return numerical_autocov_at(model, t); };
}

AutocovGrid autocov_grid(const DelayModelSpec& model, double delta, int m) {
  if (!(delta > 0) || m < 0) throw std::invalid_argument("grid needs delta > 0 and m >= 0");
  std::optional<TwoDelay> td;
  if (const auto* t = std::get_if<TwoDelay>(&model)) td = *t;
  if (const auto* md = std::get_if<MultiDelay>(&model)) td = to_two_delay(*md);
  const auto* e = std::get_if<ExpKernel>(&model);
  if (!td && !(e && std::isinf(e->r))) return numerical_autocov(model, delta, m);
  AutocovGrid g;
  g.delta = delta;
  g.model = model;
  g.method = AutocovMethod::ClosedForm;
  g.source = covariance_function(model);
  g.values = g.source(Eigen::VectorXd::LinSpaced(m + 1, 0.0, m * delta));
  return g;
}

AutocovGrid autocov_grid(const DelayModelSpec& model, const ParameterBinding& binding,
                         double delta, int m) {
  AutocovGrid g = autocov_grid(model, delta, m);
  auto grad = autocov_grad(model, binding, delta, m);
  g.grads = std::move(grad.grad);
  g.one_sided = std::move(grad.one_sided);
  g.params = binding.names();
  return g;
}

// ---------------------------------------------------------------------------
// Yule-Walker residuals

double yw_residual(const BatchCovFn& K, const DelayModelSpec& model, double t) {
  if (!(t > 0)) throw std::invalid_argument("Yule-Walker residual needs t > 0");
  static constexpr double central[7] = {-1.0 / 60, 3.0 / 20, -3.0 / 4, 0.0,
                                        3.0 / 4,   -3.0 / 20, 1.0 / 60};
  static constexpr double forward[7] = {-49.0 / 20, 6.0, -15.0 / 2, 20.0 / 3,
                                        -15.0 / 4,  6.0 / 5, -1.0 / 6};
  const auto kinks = kink_points(model);

  double h = 1e-3 * std::max(1.0, t / 10);
  int offset0 = -3, dir = 1;
  const double* coef = central;
  for (;; h *= 0.5) {
    if (h < 1e-7) throw NumericalError("no kink-free difference stencil near t");
    if (!kink_in(kinks, t - 3 * h, t + 3 * h)) {
      coef = central, offset0 = -3, dir = 1;
      break;
    }
    if (!kink_in(kinks, t, t + 6 * h)) {
      coef = forward, offset0 = 0, dir = 1;
      break;
    }
    if (!kink_in(kinks, t - 6 * h, t)) {
      coef = forward, offset0 = 0, dir = -1;
      break;
    }
  }

  std::vector<double> xs, ws;
  delay_measure_rule(model, t, xs, ws);
  Eigen::VectorXd pts(7 + xs.size());
  for (int i = 0; i < 7; ++i) pts(i) = std::abs(t + dir * (offset0 + i) * h);
  for (std::size_t i = 0; i < xs.size(); ++i) pts(7 + i) = std::abs(xs[i]);
  const Eigen::VectorXd k = K(pts);

  double deriv = 0.0;
  for (int i = 0; i < 7; ++i) deriv += coef[i] * k(i);
  deriv /= dir * h;
  double integral = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) integral += ws[i] * k(7 + i);
  return deriv - integral;
}

double yw_residual(const CovFn& K, const DelayModelSpec& model, double t) {
  return yw_residual(
      [&K](const Eigen::VectorXd& x) {
        Eigen::VectorXd out(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = K(x(i));
        return out;
      },
      model, t);
}

double yw_residual(const AutocovGrid& grid, double t) {
  if (!grid.source) throw std::invalid_argument("grid carries no covariance source");
  return yw_residual(grid.source, grid.model, t);
}

double boundary_residual(const BatchCovFn& K, const DelayModelSpec& model) {
  std::vector<double> xs, ws;
  delay_measure_rule(model, 0.0, xs, ws);
  Eigen::VectorXd pts(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) pts(i) = std::abs(xs[i]);
  const Eigen::VectorXd k = K(pts);
  double integral = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) integral += ws[i] * k(i);
  const double s = sigma_of(model);
  return 2 * integral + s * s;
}

// ---------------------------------------------------------------------------
// Gradients

AutocovGradient autocov_grad(const DelayModelSpec& model, const ParameterBinding& binding,
                             double delta, int m) {
  binding.check(model);
  const Eigen::VectorXd theta = binding.theta(model);
  const int p = binding.size();
  AutocovGradient out;
  out.grad.resize(p, m + 1);
  out.one_sided.assign(p, false);
  auto values = [&](const Eigen::VectorXd& th) {
    return autocov_grid(binding.apply(model, th), delta, m).values;
  };
  const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::VectorXd base;
  for (int i = 0; i < p; ++i) {
    const double h = cbrt_eps * std::max(std::abs(theta(i)), 1.0);
    auto shifted = [&](double step) {
      Eigen::VectorXd th = theta;
      th(i) += step;
      return th;
    };
    const bool up = feasible(model, binding, shifted(h));
    const bool down = feasible(model, binding, shifted(-h));
    if (up && down) {
      out.grad.row(i) = ((values(shifted(h)) - values(shifted(-h))) / (2 * h)).transpose();
      continue;
    }
    if (!up && !down)
      throw NumericalError("no feasible difference step for parameter " + binding.free_slot(i).path);
    out.one_sided[i] = true;
    if (base.size() == 0) base = values(theta);
    const double s = up ? h : -h;
    if (feasible(model, binding, shifted(2 * s)))
      out.grad.row(i) =
          ((-3 * base + 4 * values(shifted(s)) - values(shifted(2 * s))) / (2 * s)).transpose();
    else
      out.grad.row(i) = ((values(shifted(s)) - base) / s).transpose();
  }
  return out;
}

}  // namespace sdde
