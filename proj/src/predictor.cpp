#include "sdde/predictor.hpp"

#include "sdde/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sdde {

namespace {

void check_inputs(const AutocovGrid& K, int k) {
  if (k < 1) throw std::invalid_argument("prediction depth k must be >= 1");
  if (K.m() < k) throw CoverageError("autocovariance grid does not reach lag k");
  if (!(K.values(0) > 0)) throw LadderError(0, "K(0) must be positive");
}

}  // namespace

PredictorCoefficients durbin_levinson(const AutocovGrid& K, int k) {
  check_inputs(K, k);
  PredictorCoefficients c;
  c.k = k;
  c.ladder_phi.reserve(k + 1);
  c.ladder_v.reserve(k + 1);
  c.ladder_phi.emplace_back(0);
  c.ladder_v.push_back(K.at(0));

  for (int i = 1; i <= k; ++i) {
    const Eigen::VectorXd& prev = c.ladder_phi[i - 1];
    const double v_prev = c.ladder_v[i - 1];
    double num = K.at(i);
    for (int j = 1; j < i; ++j) num -= prev(j - 1) * K.at(i - j);
    const double pii = num / v_prev;
    const double shrink = 1.0 - pii * pii;
    if (!(shrink >= kLadderFloor))
      throw LadderError(i, "Durbin-Levinson breakdown at level " + std::to_string(i) +
                               ": 1 - phi_ii^2 = " + std::to_string(shrink));
    Eigen::VectorXd cur(i);
    for (int j = 1; j < i; ++j) cur(j - 1) = prev(j - 1) - pii * prev(i - j - 1);
    cur(i - 1) = pii;
    c.ladder_phi.push_back(std::move(cur));
    c.ladder_v.push_back(v_prev * shrink);
  }
  c.phi = c.ladder_phi[k];
  c.v = c.ladder_v[k];
  return c;
}

PredictorCoefficients durbin_levinson_grad(const AutocovGrid& K, int k) {
  PredictorCoefficients c = durbin_levinson(K, k);
  if (!K.has_grads()) throw std::invalid_argument("autocovariance grid carries no gradients");
  const int p = static_cast<int>(K.grads.rows());
  auto dK = [&](int lag) { return K.grads.col(lag < 0 ? -lag : lag); };

  // dphi_prev: p x (i-1) derivative of the level i-1 coefficients.
  Eigen::MatrixXd dphi_prev(p, 0);
  Eigen::VectorXd dv_prev = dK(0);
  for (int i = 1; i <= k; ++i) {
    const Eigen::VectorXd& prev = c.ladder_phi[i - 1];
    const double v_prev = c.ladder_v[i - 1];
    const double pii = c.ladder_phi[i](i - 1);
    double num = K.at(i);
    Eigen::VectorXd dnum = dK(i);
    for (int j = 1; j < i; ++j) {
      num -= prev(j - 1) * K.at(i - j);
      dnum -= dphi_prev.col(j - 1) * K.at(i - j) + prev(j - 1) * dK(i - j);
    }
    // Quotient rule for phi_ii = num / v_{i-1}.
    const Eigen::VectorXd dpii = (dnum * v_prev - num * dv_prev) / (v_prev * v_prev);
    Eigen::MatrixXd dphi(p, i);
    for (int j = 1; j < i; ++j)
      dphi.col(j - 1) = dphi_prev.col(j - 1) - dpii * prev(i - j - 1) - pii * dphi_prev.col(i - j - 1);
    dphi.col(i - 1) = dpii;
    dv_prev = dv_prev * (1.0 - pii * pii) - 2.0 * v_prev * pii * dpii;
    dphi_prev = std::move(dphi);
  }
  c.dphi = std::move(dphi_prev);
  c.dv = std::move(dv_prev);
  return c;
}

DirectSolution direct_solve(const AutocovGrid& K, int k) {
  check_inputs(K, k);
  const Eigen::MatrixXd T = K.toeplitz(k);
  const Eigen::VectorXd kap = K.kappa(k);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(T);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * ldlt.vectorD().maxCoeff())
    throw NumericalError("Toeplitz system is singular or indefinite");
  DirectSolution s;
  s.phi = ldlt.solve(kap);
  s.v = K.at(0) - kap.dot(s.phi);
  return s;
}

}  // namespace sdde
