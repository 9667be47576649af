#include "oracles.hpp"

#include "sdde/errors.hpp"
#include "sdde/estimator.hpp"
#include "sdde/simulator.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sdde;

namespace {

const TwoDelay kTruth{-1, -0.1353, 1, 1};

ObservationSeries simulated(std::uint64_t seed, int n, double delta = 1.0) {
  SimConfig cfg;
  cfg.model = kTruth;
  cfg.h = 0.01;
  cfg.seed = seed;
  return simulate_observations(cfg, delta, n);
}

const ParameterBinding& ab() {
  static const auto b = ParameterBinding::free_fields({"a", "b"});
  return b;
}

}  // namespace

TEST(EstimatorProperty, MeanSquaredErrorShrinksWithSampleSize) {
  const int R = 200, k = 3;
  std::vector<double> mse;
  for (int n : {100, 200, 400, 800}) {
    std::vector<double> err(R, std::numeric_limits<double>::quiet_NaN());
    parallel_for(R, 0, [&](int r) {
      const auto res = maximize_pseudo_lik(simulated(derive_seed(31, n, r), n), kTruth, ab(), k);
      if (res.converged) err[r] = (res.theta - ab().theta(kTruth)).squaredNorm();
    });
    std::vector<double> ok;
    for (double e : err)
      if (std::isfinite(e)) ok.push_back(e);
    EXPECT_GE(ok.size(), 0.95 * R);
    mse.push_back(oracle::mean(ok));
  }
  for (std::size_t i = 1; i < mse.size(); ++i) EXPECT_LT(mse[i], mse[i - 1]) << i;
  EXPECT_LT(mse[3] / mse[0], 0.25);
}

TEST(EstimatorProperty, StandardErrorCoverage) {
  const int R = 500, n = 200, k = 5;
  std::vector<int> hit(2 * R, -1);
  parallel_for(R, 0, [&](int r) {
    const auto res = maximize_pseudo_lik(simulated(derive_seed(32, r), n), kTruth, ab(), k);
    if (!res.converged || !res.se.allFinite()) return;
    const Eigen::VectorXd truth = ab().theta(kTruth);
    for (int p = 0; p < 2; ++p) hit[2 * r + p] = std::abs(res.theta(p) - truth(p)) <= 1.96 * res.se(p);
  });
  for (int p = 0; p < 2; ++p) {
    int used = 0, covered = 0;
    for (int r = 0; r < R; ++r)
      if (hit[2 * r + p] >= 0) {
        ++used;
        covered += hit[2 * r + p];
      }
    ASSERT_GE(used, 0.95 * R);
    const double rate = static_cast<double>(covered) / used;
    EXPECT_GE(rate, 0.90) << "param " << p;
    EXPECT_LE(rate, 0.99) << "param " << p;
  }
}

TEST(EstimatorProperty, TwoStepTracksOptimal) {
  const int R = 100, n = 200, k = 3;
  std::vector<Eigen::VectorXd> opt(R), two(R);
  parallel_for(R, 0, [&](int r) {
    const auto data = simulated(derive_seed(33, r), n);
    const auto ps = maximize_pseudo_lik(data, kTruth, ab(), k);
    const auto o = solve_optimal(data, ps.converged ? ab().apply(kTruth, ps.theta) : kTruth, ab(), k);
    const auto t = solve_two_step(data, kTruth, ab(), k, ps);
    if (o.converged && t.converged) {
      opt[r] = o.theta;
      two[r] = t.theta;
    }
  });
  for (int p = 0; p < 2; ++p) {
    std::vector<double> o, d;
    for (int r = 0; r < R; ++r)
      if (opt[r].size()) {
        o.push_back(opt[r](p));
        d.push_back(std::abs(two[r](p) - opt[r](p)));
      }
    ASSERT_GE(o.size(), 0.9 * R);
    EXPECT_LT(oracle::mean(d), 0.25 * oracle::sd(o)) << "param " << p;
  }
}

TEST(EstimatorProperty, StartingPointDoesNotChangeTheMaximum) {
  const int R = 60, n = 200, k = 3;
  std::vector<int> same(R, 0);
  parallel_for(R, 0, [&](int r) {
    const auto data = simulated(derive_seed(34, r), n);
    const auto a = maximize_pseudo_lik(data, kTruth, ab(), k);
    const auto b = maximize_pseudo_lik(data, TwoDelay{-0.6, 0.2, 1, 1}, ab(), k);
    same[r] = a.converged && b.converged && (a.theta - b.theta).cwiseAbs().maxCoeff() < 1e-5;
  });
  int total = 0;
  for (int s : same) total += s;
  EXPECT_GE(total, 0.95 * R);
}
