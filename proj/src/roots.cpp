#include "sdde/roots.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace sdde::roots {

namespace {

using cplx = std::complex<double>;

// (1 - e^{-z r}) / z, entire in z.
cplx exp_kernel_mass(cplx z, double r) {
  if (std::isinf(r)) return 1.0 / z;
  const cplx zr = z * r;
  if (std::abs(zr) < 1e-3) {
    cplx term = r, sum = r;
    for (int n = 1; n < 8; ++n) {
      term *= -zr / static_cast<double>(n + 1);
      sum += term;
    }
    return sum;
  }
  return (1.0 - std::exp(-zr)) / z;
}

struct ArgTracker {
  const CharacteristicFn& h;
  double floor;
  bool unstable = false;
  double total = 0.0;

  void segment(cplx z0, cplx h0, cplx z1, cplx h1, int depth) {
    if (unstable) return;
    double d = std::arg(h1 / h0);
    if (std::abs(d) > 0.4) {
      if (depth > 40) {
        unstable = true;
        return;
      }
      const cplx zm = 0.5 * (z0 + z1);
      const cplx hm = h(zm);
      if (std::abs(hm) < floor) {
        unstable = true;
        return;
      }
      segment(z0, h0, zm, hm, depth + 1);
      segment(zm, hm, z1, h1, depth + 1);
      return;
    }
    total += d;
  }
};

}  // namespace

CharacteristicFn characteristic_function(const DelayModelSpec& model) {
  return std::visit(
      [](const auto& m) -> CharacteristicFn {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TwoDelay>) {
          return [m](cplx z) { return z - m.a - m.b * std::exp(-z * m.r); };
        } else if constexpr (std::is_same_v<T, MultiDelay>) {
          return [m](cplx z) {
            cplx s = z;
            for (std::size_t k = 0; k < m.alphas.size(); ++k)
              s -= m.alphas[k] * std::exp(-z * m.delays[k]);
            return s;
          };
        } else {
          return [m](cplx z) { return z + m.b * exp_kernel_mass(z + m.a, m.r); };
        }
      },
      model);
}

double root_modulus_bound(const DelayModelSpec& model, double shift) {
  return std::visit(
      [shift](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TwoDelay>) {
          return std::abs(m.a) + std::abs(m.b) * std::exp(-shift * m.r);
        } else if constexpr (std::is_same_v<T, MultiDelay>) {
          double s = 0.0;
          for (std::size_t k = 0; k < m.alphas.size(); ++k)
            s += std::abs(m.alphas[k]) * std::exp(-shift * m.delays[k]);
          return s;
        } else {
          const double c = m.a + shift;
          if (std::isinf(m.r)) {
            if (c <= 0) return std::numeric_limits<double>::infinity();
            return std::abs(m.b) / c;
          }
          return std::abs(m.b) * m.r * std::max(1.0, std::exp(-c * m.r));
        }
      },
      model);
}

std::optional<int> count_zeros(const CharacteristicFn& h, double re_lo, double re_hi,
                               double im_lo, double im_hi, double samples_per_unit) {
  const cplx corners[4] = {{re_lo, im_lo}, {re_hi, im_lo}, {re_hi, im_hi}, {re_lo, im_hi}};
  const double scale = std::max({std::abs(re_lo), std::abs(re_hi), std::abs(im_lo),
                                 std::abs(im_hi), 1.0});
  ArgTracker tracker{h, 1e-13 * scale};
  for (int e = 0; e < 4; ++e) {
    const cplx a = corners[e], b = corners[(e + 1) % 4];
    const double len = std::abs(b - a);
    const int n = std::max(16, static_cast<int>(std::ceil(samples_per_unit * len)));
    cplx z_prev = a, h_prev = h(a);
    if (std::abs(h_prev) < tracker.floor) return std::nullopt;
    for (int i = 1; i <= n; ++i) {
      const cplx z = a + (b - a) * (static_cast<double>(i) / n);
      const cplx hz = h(z);
      if (std::abs(hz) < tracker.floor) return std::nullopt;
      tracker.segment(z_prev, h_prev, z, hz, 0);
      if (tracker.unstable) return std::nullopt;
      z_prev = z;
      h_prev = hz;
    }
  }
  const double winding = tracker.total / (2.0 * std::numbers::pi);
  const double rounded = std::round(winding);
  if (std::abs(winding - rounded) > 0.1) return std::nullopt;
  return static_cast<int>(rounded);
}

std::optional<int> count_roots_right_of(const DelayModelSpec& model, double shift) {
  const double bound = root_modulus_bound(model, shift);
  if (!std::isfinite(bound) || bound > 1e6) return std::nullopt;
  const double extent = bound + std::abs(shift) + 1.0;
  double r_max = max_delay(model);
  if (!std::isfinite(r_max)) r_max = 1.0;
  return count_zeros(characteristic_function(model), shift, extent, -(bound + 1.0),
                     bound + 1.0, 8.0 + 4.0 * r_max);
}

std::optional<double> spectral_abscissa(const DelayModelSpec& model, double tol,
                                        double floor) {
  double hi = root_modulus_bound(model, 0.0) + 1.0;
  auto c_hi = count_roots_right_of(model, hi);
  if (!c_hi || *c_hi != 0) return std::nullopt;

  // Walk left until some root lies to the right of `lo`.
  double lo = std::min(0.0, hi - 1.0);
  double step = 1.0;
  std::optional<int> c_lo;
  while (true) {
    c_lo = count_roots_right_of(model, lo);
    if (!c_lo) {
      lo -= 1e-6 * step;
      c_lo = count_roots_right_of(model, lo);
      if (!c_lo) return std::nullopt;
    }
    if (*c_lo > 0) break;
    hi = lo;
    lo -= step;
    step *= 2.0;
    if (lo < floor) return std::nullopt;
  }
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    auto c = count_roots_right_of(model, mid);
    if (!c) {
      mid += 0.01 * (hi - lo);
      c = count_roots_right_of(model, mid);
      if (!c) break;
    }
    if (*c > 0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace sdde::roots
