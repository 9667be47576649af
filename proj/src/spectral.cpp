#include "sdde/autocov.hpp"
#include "sdde/errors.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

namespace sdde {

namespace {

using cplx = std::complex<double>;

struct Atom {
  double alpha, delay;
};

// Everything needed to integrate the spectral density with unit sigma.
struct SpectralSetup {
  std::function<cplx(double)> transfer;  // int e^{i w s} a(ds)
  std::vector<Atom> atoms;               // atoms with positive delay (second subtraction term)
  double c = 1.0;                        // shift of the subtracted rational terms
  double tail_const = 0.0;               // |remainder(w)| <= tail_const / w^4 for w >= w0
  double w0 = 0.0;
};

SpectralSetup make_setup(const DelayModelSpec& model) {
  SpectralSetup st;
  if (const auto* e = std::get_if<ExpKernel>(&model)) {
    const double a = e->a, b = e->b, r = e->r;
    st.transfer = [a, b, r](double w) {
      const cplx z(a, w);
      if (std::isinf(r)) return -b / z;
      const cplx zr = z * r;
      cplx mass;
      if (std::abs(zr) < 1e-3) {
        cplx term = r;
        mass = r;
        for (int n = 1; n < 8; ++n) {
          term *= -zr / static_cast<double>(n + 1);
          mass += term;
        }
      } else {
        mass = (1.0 - std::exp(-zr)) / z;
      }
      return -b * mass;
    };
    // |A(w)| <= B / w and |A(w)| <= b r-type bounds; only the 1/w decay is used.
    const double B = b * (1.0 + (std::isinf(r) ? 0.0 : std::exp(-a * r)));
    st.c = 1.0 + std::sqrt(B);
    st.w0 = 4.0 * (std::sqrt(B) + st.c + 1.0);
    st.tail_const = 4.0 * B + 3.0 * st.c * st.c + 1.0;
    return st;
  }
  const MultiDelay md = std::holds_alternative<TwoDelay>(model)
                            ? to_multi_delay(std::get<TwoDelay>(model))
                            : std::get<MultiDelay>(model);
  double S = 0.0;
  for (std::size_t k = 0; k < md.alphas.size(); ++k) {
    S += std::abs(md.alphas[k]);
    if (md.delays[k] > 0) st.atoms.push_back({md.alphas[k], md.delays[k]});
  }
  st.transfer = [md](double w) {
    cplx s = 0.0;
    for (std::size_t k = 0; k < md.alphas.size(); ++k)
      s += md.alphas[k] * std::exp(cplx(0.0, -w * md.delays[k]));
    return s;
  };
  st.c = 1.0 + S;
  st.w0 = 4.0 * (S + st.c);
  st.tail_const = 14.0 * S * S + 3.0 * st.c * st.c;
  return st;
}

// Spectral density (unit sigma, over pi) minus the two analytically
// transformed terms.
double remainder(const SpectralSetup& st, double w) {
  const cplx A = st.transfer(w);
  const double re = -A.real(), im = w - A.imag();
  const double dens = 1.0 / (re * re + im * im);
  const double q = w * w + st.c * st.c;
  double sub = 1.0 / q;
  if (!st.atoms.empty()) {
    double imA = 0.0;
    for (const auto& at : st.atoms) imA -= at.alpha * std::sin(w * at.delay);
    sub += 2.0 * w * imA / (q * q);
  }
  return dens - sub;
}

// (1/pi) int_0^inf cos(w t) (subtracted terms) dw
double analytic_part(const SpectralSetup& st, double t) {
  const double c = st.c;
  double v = std::exp(-c * t) / (2 * c);
  for (const auto& at : st.atoms) {
    const double r = at.delay;
    v -= at.alpha / (4 * c) *
         ((r + t) * std::exp(-c * (r + t)) + (r - t) * std::exp(-c * std::abs(r - t)));
  }
  return v;
}

Eigen::VectorXd spectral_values(const DelayModelSpec& model, const Eigen::VectorXd& t, double tol,
                                bool uniform) {
  const SpectralSetup st = make_setup(model);
  const int n = static_cast<int>(t.size());
  if (n == 0) return Eigen::VectorXd();
  const double t_max = t.cwiseAbs().maxCoeff();
  // Tail beyond W: (1/pi) int_W^inf C/w^4 = C / (3 pi W^3) <= tol / 4.
  const double W = std::max(st.w0, std::cbrt(4.0 * st.tail_const / (3.0 * std::numbers::pi * tol)));
  const double max_width = std::min(1.0, std::numbers::pi / std::max(t_max, 1e-12));
  const double step = uniform && n > 1 ? t(1) - t(0) : 0.0;

  auto integrand = [&](double w) {
    Eigen::ArrayXd out(n);
    const double f = remainder(st, w);
    if (uniform && n > 1) {
      // cos(j w step) by the three-term recurrence, anchored at t(0) = 0.
      const double c1 = std::cos(w * step);
      double prev = 1.0, cur = c1;
      out(0) = f;
      out(1) = f * c1;
      for (int j = 2; j < n; ++j) {
        const double next = 2.0 * c1 * cur - prev;
        prev = cur;
        cur = next;
        out(j) = f * cur;
      }
    } else {
      for (int j = 0; j < n; ++j) out(j) = f * std::cos(w * t(j));
    }
    return out;
  };

  const int n0 = static_cast<int>(std::ceil(W / max_width));
  const auto res = quad::integrate_gk15(integrand, n, 0.0, W, max_width, 0.5 * tol * std::numbers::pi,
                                        n0 + 200000);
  if (!(res.error <= 0.5 * tol * std::numbers::pi)) {
    std::ostringstream os;
    os << "spectral quadrature did not reach tolerance " << tol << " (estimate "
       << res.error / std::numbers::pi << " after " << res.panels << " panels)";
    throw NumericalError(os.str());
  }
  const double s2 = sigma_of(model) * sigma_of(model);
  Eigen::VectorXd out(n);
  for (int j = 0; j < n; ++j)
    out(j) = s2 * (res.value(j) / std::numbers::pi + analytic_part(st, std::abs(t(j))));
  return out;
}

}  // namespace

Eigen::VectorXd numerical_autocov_at(const DelayModelSpec& model, const Eigen::VectorXd& t,
                                     double tol) {
  require_stationary(model);
  return spectral_values(model, t, tol, false);
}

AutocovGrid numerical_autocov(const DelayModelSpec& model, double delta, int m) {
  if (!(delta > 0) || m < 0) throw std::invalid_argument("grid needs delta > 0 and m >= 0");
  require_stationary(model);
  AutocovGrid g;
  g.delta = delta;
  g.model = model;
  g.method = AutocovMethod::Numerical;
  Eigen::VectorXd t(m + 1);
  for (int j = 0; j <= m; ++j) t(j) = j * delta;
  g.values = spectral_values(model, t, 1e-13, true);
  g.source = [model](const Eigen::VectorXd& x) { return numerical_autocov_at(model, x); };
  return g;
}

}  // namespace sdde
