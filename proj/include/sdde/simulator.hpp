#pragma once

#include "sdde/likelihood.hpp"
#include "sdde/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>

namespace sdde {

enum class InitialPolicy { Zero, Supplied };

struct SimConfig {
  DelayModelSpec model;
  double h = 0.001;
  double horizon = 1.0;  // retained time after burn-in
  double warmup = -1.0;  // negative: default_warmup(model)
  std::uint64_t seed = 0;
  InitialPolicy initial = InitialPolicy::Zero;
  // Values at times -L h, ..., -h, 0 (oldest first) when initial == Supplied.
  Eigen::VectorXd initial_segment;
  bool allow_nonstationary = false;
  double overflow_guard = 1e100;
  bool noise = true;  // false: deterministic Euler recursion of the drift alone
};

// Retained path: x(i) is the value at time i h, i = 0..N, after burn-in.
struct SamplePath {
  double h = 0.0;
  Eigen::VectorXd x;
};

// Burn-in max(50 r, 50 / decay rate), capped at `cap` time units.
double default_warmup(const DelayModelSpec& model, double cap = 2000.0);

SamplePath simulate_path(const SimConfig& config);

// X(delta), ..., X(n delta) from the retained path; delta must be a multiple of h.
ObservationSeries sample_observations(const SamplePath& path, double delta, int n);

// Simulates and subsamples in one pass without storing the fine path.
ObservationSeries simulate_observations(const SimConfig& config, double delta, int n);

struct EmpiricalAutocov {
  Eigen::VectorXd value;   // lags 0..maxlag, divided by n
  Eigen::VectorXd std_error;  // batch-means standard errors
};

EmpiricalAutocov empirical_autocov(const ObservationSeries& data, int maxlag, int batches = 20);

// Mixes (master, a, b) into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
// processed exactly once; callers write results into per-index slots.
void parallel_for(int count, int threads, const std::function<void(int)>& body);

}  // namespace sdde
