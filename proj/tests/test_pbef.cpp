#include "oracles.hpp"

#include "sdde/errors.hpp"
#include "sdde/pbef.hpp"
#include "sdde/simulator.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sdde;

namespace {

const TwoDelay kTruth{-1, -0.1353, 1, 1};

ObservationSeries series_of(std::vector<double> x, double delta = 1.0) {
  ObservationSeries s;
  s.delta = delta;
  s.x = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return s;
}

// E_theta[H(theta0)] with coefficients frozen at theta0 and moments at theta.
Eigen::VectorXd mean_h(const DelayModelSpec& at, const PredictorCoefficients& frozen, double delta) {
  const int k = frozen.k;
  const auto g = autocov_grid(at, delta, k);
  const Eigen::MatrixXd T = g.toeplitz(k);
  const Eigen::VectorXd kap = g.kappa(k);
  Eigen::VectorXd out(k + 1);
  out.head(k) = kap - T * frozen.phi;
  out(k) = g.at(0) - 2 * frozen.phi.dot(kap) + frozen.phi.dot(T * frozen.phi) - frozen.v;
  return out;
}

}  // namespace

TEST(Pbef, SingleWindowDepthOne) {
  PredictorCoefficients c;
  c.k = 1;
  c.phi = Eigen::VectorXd::Constant(1, 0.4);
  c.v = 0.7;
  const auto H = h_terms(series_of({1.5, -0.2}), c);
  ASSERT_EQ(H.count(), 1);
  const double e = -0.2 - 0.4 * 1.5;
  EXPECT_DOUBLE_EQ(H.h(0, 0), 1.5 * e);
  EXPECT_DOUBLE_EQ(H.h(1, 0), e * e - 0.7);
  EXPECT_THROW(h_terms(series_of({1.0}), c), std::invalid_argument);
}

TEST(Pbef, WindowOrderingIsMostRecentFirst) {
  PredictorCoefficients c;
  c.k = 2;
  c.phi = Eigen::Vector2d(0.5, 0.25);
  c.v = 1.0;
  const auto H = h_terms(series_of({1.0, 2.0, 4.0}), c);
  const double e = 4.0 - (0.5 * 2.0 + 0.25 * 1.0);
  EXPECT_DOUBLE_EQ(H.h(0, 0), 2.0 * e);
  EXPECT_DOUBLE_EQ(H.h(1, 0), 1.0 * e);
}

TEST(Pbef, HTermsCenteredAtTruth) {
  const int k = 2;
  const auto c = coefficients_at(kTruth, 1.0, k);
  SimConfig cfg;
  cfg.model = kTruth;
  cfg.seed = 77;
  const auto s = simulate_observations(cfg, 1.0, 10000 + k);
  const auto H = h_terms(s, c);
  // Batch means absorb the serial dependence of the H-terms.
  const int batches = 50, len = H.count() / batches;
  for (int row = 0; row <= k; ++row) {
    std::vector<double> means;
    for (int b = 0; b < batches; ++b) means.push_back(H.h.row(row).segment(b * len, len).mean());
    EXPECT_LT(std::abs(oracle::mean(means)), 3 * oracle::sd(means) / std::sqrt(batches)) << row;
  }
}

TEST(Pbef, ConstantCoefficientsGiveZeroSensitivity) {
  PredictorCoefficients c;
  c.k = 2;
  c.phi = Eigen::Vector2d(0.3, 0.1);
  c.v = 0.5;
  c.dphi = Eigen::MatrixXd::Zero(2, 2);
  c.dv = Eigen::VectorXd::Zero(2);
  EXPECT_EQ(sensitivity(c, Eigen::Matrix2d::Identity()).norm(), 0.0);
  EXPECT_THROW(require_full_rank(sensitivity(c, Eigen::Matrix2d::Identity())), NumericalError);
}

TEST(Pbef, SensitivityIsMinusJacobianOfMeanH) {
  const auto bind = ParameterBinding::free_fields({"a", "b"});
  for (int k : {1, 3}) {
    const auto mm = moment_matrices(kTruth, bind, 1.0, k);
    const auto frozen = mm.coeffs;
    for (int p = 0; p < 2; ++p) {
      const double h = 1e-5;
      Eigen::VectorXd up = bind.theta(kTruth), dn = up;
      up(p) += h;
      dn(p) -= h;
      const Eigen::VectorXd jac =
          (mean_h(bind.apply(kTruth, up), frozen, 1.0) - mean_h(bind.apply(kTruth, dn), frozen, 1.0)) / (2 * h);
      for (int q = 0; q <= k; ++q)
        EXPECT_LT(oracle::rel_err_floor(mm.S(p, q), -jac(q), 1e-2 * mm.S.cwiseAbs().maxCoeff()), 1e-5)
            << "k=" << k << " p=" << p << " q=" << q;
    }
    // Factorized form -(dphi, dv) diag(K, 1).
    Eigen::MatrixXd Kbar = Eigen::MatrixXd::Identity(k + 1, k + 1);
    Kbar.topLeftCorner(k, k) = mm.grid.toeplitz(k);
    Eigen::MatrixXd D(2, k + 1);
    D << frozen.dphi, frozen.dv;
    EXPECT_LT((mm.S + D * Kbar).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Pbef, FirstMomentMatrixBlocks) {
  const auto g = autocov_grid(kTruth, 1.0, 1);
  const auto c = durbin_levinson(g, 1);
  const Eigen::MatrixXd M = m1(c, g.toeplitz(1));
  EXPECT_DOUBLE_EQ(M(0, 0), c.v * g.at(0));
  EXPECT_EQ(M(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(M(1, 1), 2 * c.v * c.v);

  const auto wn = oracle::grid_from({1.7, 0, 0});
  const auto cw = durbin_levinson(wn, 1);
  const Eigen::MatrixXd Mw = m1(cw, wn.toeplitz(1));
  EXPECT_DOUBLE_EQ(Mw(0, 0), 1.7 * 1.7);
  EXPECT_DOUBLE_EQ(Mw(1, 1), 2 * 1.7 * 1.7);
}

TEST(Pbef, IsserlisFourthMoment) {
  // Unit white noise, k = 1: E[(e^2 - 1)^2] = E[Z^4] - 1 = 2.
  const auto wn = oracle::grid_from({1, 0, 0, 0});
  const auto c = durbin_levinson(wn, 1);
  const Eigen::MatrixXd E0 = lag_cross_moment(wn, c, 0);
  EXPECT_DOUBLE_EQ(E0(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(E0(0, 0), 1.0);
}

TEST(Pbef, IndependentLagsGiveZeroM2) {
  const auto wn = oracle::grid_from(std::vector<double>(10, 0.0));
  auto g = wn;
  g.values(0) = 2.0;
  for (int k : {1, 3}) {
    const auto c = durbin_levinson(g, k);
    const auto r = m2_isserlis(g, c, 5);
    EXPECT_EQ(r.M2.norm(), 0.0);
  }
}

TEST(Pbef, CrossMomentsMatchSimulation) {
  // Lag-0 and lag-1 cross moments against sample averages of H_i H_{i+j}^T.
  const int k = 1;
  const auto g = autocov_grid(kTruth, 1.0, 5);
  const auto c = durbin_levinson(g, k);
  SimConfig cfg;
  cfg.model = kTruth;
  cfg.seed = 5150;
  const auto s = simulate_observations(cfg, 1.0, 40000);
  const auto H = h_terms(s, c);
  for (int j : {0, 1}) {
    const Eigen::MatrixXd want = lag_cross_moment(g, c, j);
    const int batches = 40, len = (H.count() - j) / batches;
    for (int p = 0; p <= k; ++p)
      for (int q = 0; q <= k; ++q) {
        std::vector<double> means;
        for (int b = 0; b < batches; ++b) {
          double acc = 0;
          for (int i = b * len; i < (b + 1) * len; ++i) acc += H.h(p, i) * H.h(q, i + j);
          means.push_back(acc / len);
        }
        EXPECT_LT(std::abs(oracle::mean(means) - want(p, q)), 3 * oracle::sd(means) / std::sqrt(batches))
            << "j=" << j << " (" << p << "," << q << ")";
      }
  }
}

TEST(Pbef, WeightsRejectIndefiniteMoments) {
  const auto mm = moment_matrices(kTruth, ParameterBinding::free_fields({"a", "b"}), 1.0, 3);
  EXPECT_THROW(weights(mm.S, -mm.M1), NumericalError);
  EXPECT_THROW(weights(mm.S, mm.M1.topLeftCorner(3, 3)), std::invalid_argument);
}

TEST(Pbef, InformationIdentity) {
  const auto mm = moment_matrices(kTruth, ParameterBinding::free_fields({"a", "b"}), 1.0, 3);
  const Eigen::MatrixXd A = weights(mm.S, mm.Mbar);
  const Eigen::MatrixXd I1 = -mm.S * A.transpose();
  const Eigen::MatrixXd I2 = A * mm.Mbar * A.transpose();
  const Eigen::MatrixXd I3 = mm.S * mm.Mbar.inverse() * mm.S.transpose();
  const double scale = I3.cwiseAbs().maxCoeff();
  EXPECT_LT((I1 - I3).cwiseAbs().maxCoeff(), 1e-10 * scale);
  EXPECT_LT((I2 - I3).cwiseAbs().maxCoeff(), 1e-10 * scale);
}

TEST(Pbef, PseudoWeightsAreScoreWeights) {
  const int k = 3;
  const auto mm = moment_matrices(kTruth, ParameterBinding::free_fields({"a", "b"}), 1.0, k);
  const Eigen::MatrixXd A = weights(mm.S, mm.M1);
  const auto& c = mm.coeffs;
  Eigen::MatrixXd want(2, k + 1);
  want << c.dphi / c.v, c.dv / (2 * c.v * c.v);
  EXPECT_LT((A - want).cwiseAbs().maxCoeff(), 1e-10 * want.cwiseAbs().maxCoeff());
}

TEST(Pbef, EstimatingFunctionLinearity) {
  const auto c = coefficients_at(kTruth, 1.0, 2);
  SimConfig cfg;
  cfg.model = kTruth;
  cfg.seed = 8;
  const auto H = h_terms(simulate_observations(cfg, 1.0, 100), c);
  const Eigen::MatrixXd A1 = Eigen::MatrixXd::Random(2, 3), A2 = Eigen::MatrixXd::Random(2, 3);
  EXPECT_EQ(estimating_function(Eigen::MatrixXd::Zero(2, 3), H).norm(), 0.0);
  const Eigen::VectorXd lhs = estimating_function(A1 + A2, H);
  const Eigen::VectorXd rhs = estimating_function(A1, H) + estimating_function(A2, H);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, lhs.cwiseAbs().maxCoeff()));
}

TEST(Pbef, SandwichClosedForms) {
  const auto mm = moment_matrices(kTruth, ParameterBinding::free_fields({"a", "b"}), 1.0, 3);
  const Eigen::MatrixXd Aopt = weights(mm.S, mm.Mbar);
  const Eigen::MatrixXd want_opt = (mm.S * mm.Mbar.inverse() * mm.S.transpose()).inverse();
  const Eigen::MatrixXd got_opt = sandwich(Aopt, mm.S, mm.Mbar).cov;
  EXPECT_LT((got_opt - want_opt).cwiseAbs().maxCoeff(), 1e-9 * want_opt.cwiseAbs().maxCoeff());

  const Eigen::MatrixXd Aps = weights(mm.S, mm.M1);
  const Eigen::MatrixXd W = mm.S * mm.M1.inverse() * mm.S.transpose();
  const Eigen::MatrixXd B = Aps * mm.M2 * Aps.transpose();
  const Eigen::MatrixXd Wi = W.inverse();
  const Eigen::MatrixXd want_ps = Wi + Wi * B * Wi;
  const Eigen::MatrixXd got_ps = sandwich(Aps, mm.S, mm.Mbar).cov;
  EXPECT_LT((got_ps - want_ps).cwiseAbs().maxCoeff(), 1e-9 * want_ps.cwiseAbs().maxCoeff());

  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(got_ps - got_opt).eigenvalues();
  EXPECT_GE(ev.minCoeff(), -1e-10);
  EXPECT_THROW(sandwich(Eigen::MatrixXd::Zero(2, 4), mm.S, mm.Mbar), NumericalError);
}

TEST(Pbef, CovarianceGapMatchesDifference) {
  const auto mm = moment_matrices(kTruth, ParameterBinding::free_fields({"a", "b"}), 1.0, 3);
  const auto L = efficiency_loss(mm.S, mm.M1, mm.M2);
  const Eigen::MatrixXd diff = L.cov_pseudo - L.cov_opt;
  EXPECT_LT((L.cov_gap - diff).cwiseAbs().maxCoeff(), 1e-12 * L.cov_pseudo.cwiseAbs().maxCoeff());
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(L.loss(i), 1 - L.avar_opt(i) / L.avar_pseudo(i), 1e-12);

  // Nearly unidentified sigma2 at a coarse step: cov entries near 1e4.
  const auto bad = moment_matrices(kTruth, ParameterBinding::free_fields({"a", "b", "sigma2"}), 2.0, 3);
  const auto Lb = efficiency_loss(bad.S, bad.M1, bad.M2);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Lb.cov_gap).eigenvalues().minCoeff(), -1e-14);
  EXPECT_LT((Lb.cov_gap - (Lb.cov_pseudo - Lb.cov_opt)).cwiseAbs().maxCoeff(),
            1e-10 * Lb.cov_pseudo.cwiseAbs().maxCoeff());
}

TEST(Pbef, LossVanishesWithoutSecondMoment) {
  const auto mm = moment_matrices(kTruth, ParameterBinding::free_fields({"a", "b"}), 1.0, 3);
  const auto L = efficiency_loss(mm.S, mm.M1, Eigen::MatrixXd::Zero(4, 4));
  EXPECT_EQ(L.loss.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pbef, IndependentWindowsGiveZeroMonteCarloM2) {
  // Each replicate is a single window, so the scaled sum has no cross-lag terms.
  const int k = 2;
  const auto c = coefficients_at(kTruth, 1.0, k);
  const auto g = autocov_grid(kTruth, 1.0, k);
  std::vector<ObservationSeries> reps(4000);
  parallel_for(4000, 0, [&](int r) {
    SimConfig cfg;
    cfg.model = kTruth;
    cfg.h = 0.01;
    cfg.seed = derive_seed(404, r);
    reps[r] = simulate_observations(cfg, 1.0, k + 1);
  });
  const auto mc = m2_from_series(reps, c, m1(c, g.toeplitz(k)));
  for (int p = 0; p <= k; ++p)
    for (int q = 0; q <= k; ++q)
      EXPECT_LT(std::abs(mc.M2(p, q)), 3.5 * mc.M2_se(p, q) + 0.02 * mc.Mbar(p, p)) << p << "," << q;
}

TEST(Pbef, MonteCarloErrorShrinksAtSquareRootRate) {
  const auto c = coefficients_at(kTruth, 1.0, 1);
  MonteCarloOptions o;
  o.n = 100;
  o.h = 0.01;
  const auto small = m2_montecarlo(kTruth, c, 1.0, 200, 1, o);
  const auto large = m2_montecarlo(kTruth, c, 1.0, 400, 1, o);
  const double ratio = small.M2_se(0, 0) / large.M2_se(0, 0);
  EXPECT_GT(ratio, 1.15);
  EXPECT_LT(ratio, 1.7);
}
