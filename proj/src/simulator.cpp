#include "sdde/simulator.hpp"

#include "sdde/autocov.hpp"
#include "sdde/errors.hpp"
#include "sdde/roots.hpp"

#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sdde {

namespace {

int steps_for(double span, double h, const char* what) {
  const double q = span / h;
  const double rq = std::round(q);
  if (std::abs(q - rq) > 1e-9 * std::max(1.0, q))
    throw std::invalid_argument(std::string(what) + " is not a multiple of the step h");
  return static_cast<int>(rq);
}

// Truncation horizon for an untruncated exponential kernel: e^{-a s} < 1e-12.
double kernel_horizon(const ExpKernel& e) {
  return std::isfinite(e.r) ? e.r : 27.7 / e.a;
}

// Explicit Euler-Maruyama with a ring buffer over the delay window.
class EulerStepper {
 public:
  EulerStepper(const SimConfig& cfg) : h_(cfg.h), sigma_(sigma_of(cfg.model)) {
    std::visit([this](const auto& m) { setup(m); }, cfg.model);
    buf_.assign(L_ + 1, 0.0);
    if (cfg.initial == InitialPolicy::Supplied) {
      if (cfg.initial_segment.size() != L_ + 1)
        throw std::invalid_argument("initial segment must hold " + std::to_string(L_ + 1) +
                                    " values");
      for (int i = 0; i <= L_; ++i) buf_[i] = cfg.initial_segment(i);
      head_ = L_;
    }
    guard_ = cfg.overflow_guard;
    if (kernel_) recompute_kernel_sum();
    sqrt_h_ = std::sqrt(h_);
  }

  double current() const { return buf_[head_]; }

  double step(double z) {
    const double drift = kernel_ ? kernel_drift() : atom_drift();
    const double next = current() + drift * h_ + sigma_ * sqrt_h_ * z;
    if (!(std::abs(next) <= guard_))
      throw NumericalError("simulated path exceeded the overflow guard after " +
                           std::to_string(count_) + " steps");
    const double oldest = lagged(L_);
    head_ = head_ == L_ ? 0 : head_ + 1;
    buf_[head_] = next;
    ++count_;
    if (kernel_) {
      if (count_ % std::max(L_, 1) == 0)
        recompute_kernel_sum();
      else
        ksum_ = next + decay_ * (ksum_ - tail_w_ * oldest);
    }
    return next;
  }

 private:
  void setup(const TwoDelay& m) { setup(to_multi_delay(m)); }
  void setup(const MultiDelay& m) {
    for (std::size_t k = 0; k < m.alphas.size(); ++k) {
      lags_.push_back(steps_for(m.delays[k], h_, "delay"));
      alphas_.push_back(m.alphas[k]);
    }
    L_ = *std::max_element(lags_.begin(), lags_.end());
  }
  void setup(const ExpKernel& m) {
    kernel_ = true;
    b_ = m.b;
    a_ = m.a;
    const double horizon = kernel_horizon(m);
    L_ = std::isfinite(m.r) ? steps_for(horizon, h_, "kernel horizon")
                            : static_cast<int>(std::ceil(horizon / h_));
    decay_ = std::exp(-m.a * h_);
    tail_w_ = std::exp(-m.a * L_ * h_);
  }

  double lagged(int m) const {
    int idx = head_ - m;
    if (idx < 0) idx += L_ + 1;
    return buf_[idx];
  }

  double atom_drift() const {
    double d = 0.0;
    for (std::size_t k = 0; k < lags_.size(); ++k) d += alphas_[k] * lagged(lags_[k]);
    return d;
  }

  // Trapezoid rule for -b int_{-r}^0 X(t+s) e^{a s} ds over the buffer.
  double kernel_drift() const {
    const double trap = h_ * (ksum_ - 0.5 * current() - 0.5 * tail_w_ * lagged(L_));
    return -b_ * trap;
  }

  void recompute_kernel_sum() {
    double s = 0.0, w = 1.0;
    for (int m = 0; m <= L_; ++m) {
      s += w * lagged(m);
      w *= decay_;
    }
    ksum_ = s;
  }

  double h_, sigma_, sqrt_h_ = 0.0, guard_ = 1e100;
  int L_ = 0, head_ = 0;
  long long count_ = 0;
  std::vector<double> buf_;
  std::vector<int> lags_;
  std::vector<double> alphas_;
  bool kernel_ = false;
  double a_ = 0.0, b_ = 0.0, decay_ = 1.0, tail_w_ = 1.0, ksum_ = 0.0;
};

void check_config(const SimConfig& cfg) {
  validate(cfg.model);
  if (!(cfg.h > 0) || !std::isfinite(cfg.h)) throw std::invalid_argument("step h must be positive");
  if (!(cfg.horizon >= 0)) throw std::invalid_argument("horizon must be non-negative");
  if (!cfg.allow_nonstationary) require_stationary(cfg.model);
}

// Calls sink(i, x) for every retained step i = 0..N (time i h after burn-in).
template <class Sink>
void run(const SimConfig& cfg, long long retained_steps, Sink&& sink) {
  check_config(cfg);
  const double warmup = cfg.warmup < 0 ? default_warmup(cfg.model) : cfg.warmup;
  const long long burn = static_cast<long long>(std::ceil(warmup / cfg.h - 1e-9));
  std::mt19937_64 rng(cfg.seed);
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] { return cfg.noise ? normal(rng) : 0.0; };
  EulerStepper stepper(cfg);
  for (long long i = 0; i < burn; ++i) stepper.step(draw());
  sink(0, stepper.current());
  for (long long i = 1; i <= retained_steps; ++i) sink(i, stepper.step(draw()));
}

}  // namespace

double default_warmup(const DelayModelSpec& model, double cap) {
  double r = max_delay(model);
  if (const auto* e = std::get_if<ExpKernel>(&model)) r = kernel_horizon(*e);
  double rate = 0.0;
  if (auto abscissa = roots::spectral_abscissa(model, 1e-6)) rate = -*abscissa;
  const double by_rate = rate > 0 ? 50.0 / rate : cap;
  return std::min(cap, std::max(50.0 * r, by_rate));
}

SamplePath simulate_path(const SimConfig& cfg) {
  const long long n = static_cast<long long>(std::llround(cfg.horizon / cfg.h));
  SamplePath path;
  path.h = cfg.h;
  path.x.resize(n + 1);
  run(cfg, n, [&](long long i, double x) { path.x(i) = x; });
  return path;
}

ObservationSeries sample_observations(const SamplePath& path, double delta, int n) {
  if (n < 1) throw std::invalid_argument("need n >= 1 observations");
  const int stride = steps_for(delta, path.h, "delta");
  if (stride < 1) throw std::invalid_argument("delta must be at least h");
  if (static_cast<long long>(stride) * n > path.x.size() - 1)
    throw CoverageError("path does not cover n * delta");
  ObservationSeries out;
  out.delta = delta;
  out.x.resize(n);
  for (int i = 0; i < n; ++i) out.x(i) = path.x(static_cast<Eigen::Index>(stride) * (i + 1));
  return out;
}

ObservationSeries simulate_observations(const SimConfig& cfg, double delta, int n) {
  if (n < 1) throw std::invalid_argument("need n >= 1 observations");
  const int stride = steps_for(delta, cfg.h, "delta");
  if (stride < 1) throw std::invalid_argument("delta must be at least h");
  ObservationSeries out;
  out.delta = delta;
  out.seed = cfg.seed;
  out.source_model = cfg.model;
  out.x.resize(n);
  run(cfg, static_cast<long long>(stride) * n, [&](long long i, double x) {
    if (i > 0 && i % stride == 0) out.x(i / stride - 1) = x;
  });
  return out;
}

EmpiricalAutocov empirical_autocov(const ObservationSeries& data, int maxlag, int batches) {
  const int n = data.n();
  if (maxlag < 0 || n <= maxlag) throw std::invalid_argument("empirical autocovariance needs n > maxlag");
  auto estimate = [&](int lo, int hi, int lag) {
    double s = 0.0;
    for (int i = lo; i + lag < hi; ++i) s += data.x(i) * data.x(i + lag);
    return s / (hi - lo);
  };
  EmpiricalAutocov out;
  out.value.resize(maxlag + 1);
  out.std_error = Eigen::VectorXd::Constant(maxlag + 1, std::numeric_limits<double>::quiet_NaN());
  for (int j = 0; j <= maxlag; ++j) out.value(j) = estimate(0, n, j);
  const int len = n / std::max(batches, 1);
  if (batches >= 2 && len > maxlag) {
    for (int j = 0; j <= maxlag; ++j) {
      Eigen::VectorXd b(batches);
      for (int q = 0; q < batches; ++q) b(q) = estimate(q * len, (q + 1) * len, j);
      const double mean = b.mean();
      const double var = (b.array() - mean).square().sum() / (batches - 1);
      out.std_error(j) = std::sqrt(var / batches);
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b + 0x632be59bd9b4e019ULL));
}

void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  if (count <= 0) return;
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, count);
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::mutex failure_lock;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> g(failure_lock);
          if (!failure) failure = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace sdde
