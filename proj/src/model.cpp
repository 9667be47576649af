#include "sdde/model.hpp"

#include "sdde/roots.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sdde {

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

// Parses "name[i]" into (name, i); returns index -1 for plain names.
std::pair<std::string_view, int> split_path(std::string_view path) {
  const auto open = path.find('[');
  if (open == std::string_view::npos) return {path, -1};
  const auto close = path.find(']', open);
  require(close == path.size() - 1, "malformed parameter path: " + std::string(path));
  int idx = -1;
  const auto digits = path.substr(open + 1, close - open - 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), idx);
  require(ec == std::errc() && ptr == digits.data() + digits.size() && idx >= 0,
          "malformed parameter index: " + std::string(path));
  return {path.substr(0, open), idx};
}

double* field_ptr(DelayModelSpec& model, std::string_view path) {
  auto [name, idx] = split_path(path);
  return std::visit(
      [&](auto& m) -> double* {
        using T = std::decay_t<decltype(m)>;
        if (name == "sigma") return &m.sigma;
        if constexpr (std::is_same_v<T, MultiDelay>) {
          auto pick = [&](std::vector<double>& v) -> double* {
            require(idx >= 0 && idx < static_cast<int>(v.size()),
                    "parameter index out of range: " + std::string(path));
            return &v[idx];
          };
          if (name == "alpha") return pick(m.alphas);
          if (name == "delay") return pick(m.delays);
        } else {
          if (idx < 0) {
            if (name == "a") return &m.a;
            if (name == "b") return &m.b;
            if (name == "r") return &m.r;
          }
        }
        throw std::invalid_argument("unknown parameter '" + std::string(path) +
                                    "' for family " + family_name(model));
      },
      model);
}

StationarityVerdict two_delay_verdict(const TwoDelay& m) {
  StationarityVerdict v;
  if (m.a == 0.0) {
    const double br = m.b * m.r;
    const bool ok = -kPi / 2 < br && br < 0;
    v.verdict = ok ? Verdict::Stationary : Verdict::NotStationary;
    v.margin = std::min(m.b + kPi / (2 * m.r), -m.b);
    v.detail = "a = 0: stationary iff -pi/2 < b r < 0";
    return v;
  }
  if (m.a * m.r >= 1.0) {
    v.verdict = Verdict::NotStationary;
    v.margin = 1.0 / m.r - m.a;
    v.detail = "a >= 1/r";
    return v;
  }
  const double lower = two_delay_lower_b(m.a, m.r);
  const double upper = -m.a;
  v.margin = std::min(m.b - lower, upper - m.b);
  v.verdict = (lower < m.b && m.b < upper) ? Verdict::Stationary : Verdict::NotStationary;
  std::ostringstream os;
  os.precision(10);
  os << "requires " << lower << " < b < " << upper;
  v.detail = os.str();
  return v;
}

StationarityVerdict exp_kernel_verdict(const ExpKernel& m) {
  StationarityVerdict v;
  if (std::isinf(m.r)) {
    v.sufficient_only = true;
    v.margin = std::min(m.a, m.b);
    v.verdict = v.margin > 0 ? Verdict::Stationary : Verdict::Indeterminate;
    v.detail = "infinite horizon: stationary for a > 0, b > 0";
    return v;
  }
  if (m.a == 0.0) {
    const double upper = kPi * kPi / (2 * m.r * m.r);
    v.verdict = (0 < m.b && m.b < upper) ? Verdict::Stationary : Verdict::NotStationary;
    v.margin = std::min(m.b, upper - m.b);
    v.detail = "a = 0: stationary iff 0 < b < pi^2/(2 r^2)";
    return v;
  }
  // Only a sufficient region is available for a != 0.
  v.sufficient_only = true;
  if (m.a < 0) {
    v.verdict = Verdict::Indeterminate;
    v.margin = m.a;
    v.detail = "a < 0: no stationarity criterion available";
    return v;
  }
  const double cap = std::max(kPi * kPi / (m.r * m.r),
                              std::pow(m.a * std::expm1(m.a * m.r), 2));
  const double b_max = cap / (1.0 + std::exp(-m.a * m.r));
  v.margin = std::min(m.b, b_max - m.b);
  v.verdict = v.margin > 0 ? Verdict::Stationary : Verdict::Indeterminate;
  v.detail = "sufficient region b (1 + e^{-a r}) < max(pi^2/r^2, a^2 (e^{a r} - 1)^2)";
  return v;
}

StationarityVerdict multi_delay_verdict(const MultiDelay& m, const RootTestOptions& opt) {
  StationarityVerdict v;
  const DelayModelSpec spec = m;
  const auto left = roots::count_roots_right_of(spec, -opt.strip);
  const auto right = roots::count_roots_right_of(spec, opt.strip);
  if (left && *left == 0) {
    v.verdict = Verdict::Stationary;
  } else if (right && *right > 0) {
    v.verdict = Verdict::NotStationary;
  } else {
    v.verdict = Verdict::Indeterminate;
    v.detail = "characteristic root within the undecidable strip around the imaginary axis";
    return v;
  }
  v.margin = v.stationary() ? opt.strip : -opt.strip;
  if (opt.compute_margin) {
    if (auto abscissa = roots::spectral_abscissa(spec)) v.margin = -*abscissa;
  }
  v.detail = "argument-principle root count";
  return v;
}

}  // namespace

void validate(const DelayModelSpec& model) {
  std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        require(std::isfinite(m.sigma) && m.sigma > 0, "sigma must be positive");
        if constexpr (std::is_same_v<T, TwoDelay>) {
          require(std::isfinite(m.a) && std::isfinite(m.b), "a and b must be finite");
          require(std::isfinite(m.r) && m.r > 0, "delay r must be positive");
        } else if constexpr (std::is_same_v<T, MultiDelay>) {
          require(!m.alphas.empty(), "multi-delay model needs at least one delay");
          require(m.alphas.size() == m.delays.size(), "alphas and delays differ in length");
          for (std::size_t k = 0; k < m.delays.size(); ++k) {
            require(std::isfinite(m.alphas[k]), "alphas must be finite");
            require(std::isfinite(m.delays[k]) && m.delays[k] >= 0, "delays must be >= 0");
            if (k > 0) require(m.delays[k] > m.delays[k - 1], "delays must increase strictly");
          }
        } else {
          require(std::isfinite(m.a), "a must be finite");
          require(std::isfinite(m.b) && m.b > 0, "kernel mass rate b must be positive");
          require(m.r > 0, "delay horizon r must be positive");
        }
      },
      model);
}

MultiDelay to_multi_delay(const TwoDelay& m) { return {{m.a, m.b}, {0.0, m.r}, m.sigma}; }

std::optional<TwoDelay> to_two_delay(const MultiDelay& m) {
  if (m.alphas.size() != 2 || m.delays.size() != 2 || m.delays[0] != 0.0) return std::nullopt;
  return TwoDelay{m.alphas[0], m.alphas[1], m.delays[1], m.sigma};
}

double sigma_of(const DelayModelSpec& model) {
  return std::visit([](const auto& m) { return m.sigma; }, model);
}

double max_delay(const DelayModelSpec& model) {
  return std::visit(
      [](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MultiDelay>)
          return m.delays.empty() ? 0.0 : m.delays.back();
        else
          return m.r;
      },
      model);
}

std::string family_name(const DelayModelSpec& model) {
  switch (model.index()) {
    case 0: return "two_delay";
    case 1: return "multi_delay";
    default: return "exp_kernel";
  }
}

double xi(double u) {
  if (u == 0.0) return kPi / 2;
  if (!(u < 1.0)) throw std::domain_error("xi(u) has no root in (0, pi) for u >= 1");
  // g has no poles; its zero in the bracket is the root of xi = u tan(xi).
  auto g = [u](double x) { return x * std::cos(x) - u * std::sin(x); };
  double lo = u > 0 ? 0.0 : kPi / 2;
  double hi = u > 0 ? kPi / 2 : kPi;
  // g(lo) > 0 > g(hi) on both branches.
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0 ? lo : hi) = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 3; ++it) {
    const double d = std::cos(x) - x * std::sin(x) - u * std::cos(x);
    if (d == 0.0) break;
    const double next = x - g(x) / d;
    if (next <= lo - 1e-12 || next >= hi + 1e-12) break;
    x = next;
  }
  return x;
}

double lambda_ab(double a, double b) { return std::sqrt(std::abs(a * a - b * b)); }

double two_delay_lower_b(double a, double r) {
  if (a == 0.0) return -kPi / (2 * r);
  return -a / std::cos(xi(a * r));
}

StationarityVerdict is_stationary(const DelayModelSpec& model, const RootTestOptions& options) {
  validate(model);
  return std::visit(
      [&](const auto& m) -> StationarityVerdict {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TwoDelay>)
          return two_delay_verdict(m);
        else if constexpr (std::is_same_v<T, ExpKernel>)
          return exp_kernel_verdict(m);
        else
          return multi_delay_verdict(m, options);
      },
      model);
}

// ---------------------------------------------------------------------------

double get_field(const DelayModelSpec& model, std::string_view path) {
  if (path == "sigma2") {
    const double s = sigma_of(model);
    return s * s;
  }
  auto copy = model;
  return *field_ptr(copy, path);
}

void set_field(DelayModelSpec& model, std::string_view path, double value) {
  if (path == "sigma2") {
    require(value > 0, "sigma2 must be positive");
    *field_ptr(model, "sigma") = std::sqrt(value);
    return;
  }
  *field_ptr(model, path) = value;
}

ParameterBinding::ParameterBinding(std::vector<ParameterSlot> slots) : slots_(std::move(slots)) {
  for (int i = 0; i < static_cast<int>(slots_.size()); ++i) {
    const auto& s = slots_[i];
    require(!(s.lower > s.upper), "empty bounds for " + s.path);
    if (s.free) free_index_.push_back(i);
  }
}

ParameterBinding ParameterBinding::free_fields(const std::vector<std::string>& paths) {
  std::vector<ParameterSlot> slots;
  for (const auto& p : paths) slots.push_back({p, true});
  return ParameterBinding(std::move(slots));
}

std::vector<std::string> ParameterBinding::names() const {
  std::vector<std::string> out;
  for (int i : free_index_) out.push_back(slots_[i].path);
  return out;
}

Eigen::VectorXd ParameterBinding::theta(const DelayModelSpec& model) const {
  Eigen::VectorXd t(size());
  for (int i = 0; i < size(); ++i) t(i) = get_field(model, free_slot(i).path);
  return t;
}

DelayModelSpec ParameterBinding::apply(const DelayModelSpec& model,
                                       const Eigen::VectorXd& theta) const {
  require(theta.size() == size(), "parameter vector has wrong dimension");
  DelayModelSpec out = model;
  for (int i = 0; i < size(); ++i) set_field(out, free_slot(i).path, theta(i));
  return out;
}

bool ParameterBinding::within_bounds(const Eigen::VectorXd& theta) const {
  for (int i = 0; i < size(); ++i) {
    const auto& s = free_slot(i);
    if (!(theta(i) >= s.lower && theta(i) <= s.upper)) return false;
  }
  return true;
}

void ParameterBinding::check(const DelayModelSpec& model) const {
  require(size() >= 1, "at least one free parameter is required");
  for (const auto& s : slots_) (void)get_field(model, s.path);
  require(within_bounds(theta(model)), "a free parameter lies outside its bounds");
}

bool feasible(const DelayModelSpec& model, const ParameterBinding& binding,
              const Eigen::VectorXd& theta, double margin) {
  if (!theta.allFinite() || !binding.within_bounds(theta)) return false;
  try {
    const auto m = binding.apply(model, theta);
    validate(m);
    RootTestOptions opt;
    opt.compute_margin = margin > opt.strip;
    const auto v = is_stationary(m, opt);
    return v.stationary() && v.margin > margin;
  } catch (const std::invalid_argument&) {
    return false;
  } catch (const std::domain_error&) {
    return false;
  }
}

}  // namespace sdde
