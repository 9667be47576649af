#include "oracles.hpp"

#include "sdde/errors.hpp"
#include "sdde/pbef.hpp"
#include "sdde/simulator.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sdde;

namespace {

struct Case {
  TwoDelay model;
  double delta;
  int k;
};

std::vector<Case> cases() {
  std::vector<Case> out;
  for (double b : {-0.1353, -0.6, 0.5, -1.5})
    for (double delta : {0.5, 1.0})
      for (int k : {1, 3, 5}) out.push_back({TwoDelay{-1, b, 1, 1}, delta, k});
  return out;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(PbefProperty, InformationGapFormsAgree) {
  const auto bind = ParameterBinding::free_fields({"a", "b"});
  for (const auto& c : cases()) {
    const auto mm = moment_matrices(c.model, bind, c.delta, c.k);
    const auto L = efficiency_loss(mm.S, mm.M1, mm.M2);
    if (L.info_gap_alt.size() == 0) continue;
    EXPECT_LT(max_abs(L.info_gap - L.info_gap_alt), 1e-8 * std::max(1.0, max_abs(L.info_gap)))
        << "b=" << c.model.b << " delta=" << c.delta << " k=" << c.k;
  }
}

TEST(PbefProperty, OptimalCovarianceIsSmaller) {
  const auto bind = ParameterBinding::free_fields({"a", "b"});
  for (const auto& c : cases()) {
    const auto mm = moment_matrices(c.model, bind, c.delta, c.k);
    const auto L = efficiency_loss(mm.S, mm.M1, mm.M2);
    const Eigen::VectorXd ev =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(L.cov_pseudo - L.cov_opt).eigenvalues();
    EXPECT_GE(ev.minCoeff(), -1e-8 * max_abs(L.cov_pseudo));
    const Eigen::VectorXd gap = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(L.info_gap).eigenvalues();
    EXPECT_GE(gap.minCoeff(), -1e-8 * max_abs(mm.S * mm.Mbar.inverse() * mm.S.transpose()));
    for (int p = 0; p < 2; ++p) {
      EXPECT_GE(L.loss(p), -1e-10);
      EXPECT_LT(L.loss(p), 1.0);
    }
  }
}

TEST(PbefProperty, LagTermsDecayAndTruncationIsStable) {
  for (const auto& c : cases()) {
    const auto g = autocov_grid(c.model, c.delta, c.k + kM2LagCap + 40);
    const auto coeffs = durbin_levinson(g, c.k);
    const auto r = m2_isserlis(g, coeffs);
    const double scale = max_abs(m1(coeffs, g.toeplitz(c.k)));
    if (!r.truncated_by_cap) EXPECT_LT(max_abs(lag_cross_moment(g, coeffs, r.J + 1)), 1e-9 * scale);
    const auto longer = m2_isserlis(g, coeffs, std::min(r.J + 40, kM2LagCap + 40));
    EXPECT_LT(max_abs(longer.M2 - r.M2), 1e-8 * scale + 4 * r.tail_bound);
  }
}

TEST(PbefProperty, LagTermNormsDecreaseMonotonically) {
  // Models whose dominant characteristic root is real; the first 2k + 2 lags
  // are a burn-in where the prediction errors are nearly uncorrelated.
  for (double b : {-0.1353, 0.5})
    for (double delta : {0.5, 1.0})
      for (int k : {1, 3, 5}) {
        const auto g = autocov_grid(TwoDelay{-1, b, 1, 1}, delta, k + 61);
        const auto coeffs = durbin_levinson(g, k);
        const double floor = 1e-13 * max_abs(m1(coeffs, g.toeplitz(k)));
        auto norm = [&](int j) { return lag_cross_moment(g, coeffs, j).operatorNorm(); };
        for (int j = 2 * k + 2; j < 60; ++j) {
          const double cur = norm(j), next = norm(j + 1);
          if (cur < floor) break;
          EXPECT_LE(next, cur * (1 + 1e-9)) << "b=" << b << " delta=" << delta << " k=" << k << " j=" << j;
        }
      }
}

TEST(PbefProperty, TruncationSurvivesVanishingEarlyLags) {
  // At delta = r/2 and k >= 3 the lag-1 term vanishes identically.
  const auto g = autocov_grid(TwoDelay{-1, -0.1353, 1, 1}, 0.5, 3 + kM2LagCap);
  const auto coeffs = durbin_levinson(g, 3);
  EXPECT_LT(max_abs(lag_cross_moment(g, coeffs, 1)), 1e-14);
  const auto r = m2_isserlis(g, coeffs);
  EXPECT_GT(r.J, 10);
  EXPECT_FALSE(r.truncated_by_cap);
}

TEST(PbefProperty, MonteCarloMomentsStableInReplicates) {
  const TwoDelay m{-1, -0.1353, 1, 1};
  const auto c = coefficients_at(m, 1.0, 3);
  MonteCarloOptions o;
  o.n = 200;
  o.h = 0.01;
  const auto few = m2_montecarlo(m, c, 1.0, 250, 11, o);
  const auto many = m2_montecarlo(m, c, 1.0, 1000, 12, o);
  for (int p = 0; p < 4; ++p)
    for (int q = 0; q < 4; ++q) {
      const double se = std::hypot(few.Mbar_se(p, q), many.Mbar_se(p, q));
      EXPECT_LT(std::abs(few.Mbar(p, q) - many.Mbar(p, q)), 3 * se) << p << "," << q;
    }
}

TEST(PbefProperty, SandwichBreadMatchesMeanJacobian) {
  // E[dG/dtheta] / (n-k) with the weights frozen equals U^T = A S^T.
  const TwoDelay m{-1, -0.1353, 1, 1};
  const auto bind = ParameterBinding::free_fields({"a", "b"});
  const int k = 2, n = 400, R = 200;
  const auto mm = moment_matrices(m, bind, 1.0, k);
  const Eigen::MatrixXd A = weights(mm.S, mm.Mbar);
  const Eigen::MatrixXd U = sandwich(A, mm.S, mm.Mbar).U;
  const double step = 1e-4;
  std::vector<PredictorCoefficients> up, dn;
  const Eigen::VectorXd theta = bind.theta(m);
  for (int p = 0; p < 2; ++p) {
    Eigen::VectorXd tu = theta, td = theta;
    tu(p) += step;
    td(p) -= step;
    up.push_back(coefficients_at(bind.apply(m, tu), 1.0, k));
    dn.push_back(coefficients_at(bind.apply(m, td), 1.0, k));
  }
  std::vector<Eigen::MatrixXd> jac(R);
  parallel_for(R, 0, [&](int r) {
    SimConfig cfg;
    cfg.model = m;
    cfg.h = 0.001;
    cfg.seed = derive_seed(2024, r);
    const auto s = simulate_observations(cfg, 1.0, n);
    Eigen::MatrixXd J(2, 2);
    for (int p = 0; p < 2; ++p)
      J.col(p) = (estimating_function(A, h_terms(s, up[p])) - estimating_function(A, h_terms(s, dn[p]))) /
                 (2 * step * (n - k));
    jac[r] = J;
  });
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      std::vector<double> v;
      for (const auto& J : jac) v.push_back(J(i, j));
      const double se = oracle::sd(v) / std::sqrt(R);
      EXPECT_LT(std::abs(oracle::mean(v) - U(j, i)), 3 * se) << i << "," << j;
    }
}
