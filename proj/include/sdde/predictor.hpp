#pragma once

#include "sdde/autocov.hpp"

#include <Eigen/Dense>

#include <vector>

namespace sdde {

struct PredictorCoefficients {
  int k = 0;
  Eigen::VectorXd phi;   // weights on (X(i), X(i-1), ..., X(i+1-k))
  double v = 0.0;        // one-step prediction variance
  Eigen::MatrixXd dphi;  // p x k
  Eigen::VectorXd dv;    // p
  // Ladder levels 0..k: ladder_phi[i] has length i, ladder_v[i] = v_i.
  std::vector<Eigen::VectorXd> ladder_phi;
  std::vector<double> ladder_v;

  bool has_grads() const { return dv.size() > 0; }
};

// Levinson recursion below this value of 1 - phi_ii^2 is treated as breakdown.
inline constexpr double kLadderFloor = 1e-12;

PredictorCoefficients durbin_levinson(const AutocovGrid& K, int k);
// Adds dphi and dv by the differentiated recursion; K must carry gradients.
PredictorCoefficients durbin_levinson_grad(const AutocovGrid& K, int k);

struct DirectSolution {
  Eigen::VectorXd phi;
  double v;
};
// Solves the Toeplitz normal equations by a dense symmetric factorization.
DirectSolution direct_solve(const AutocovGrid& K, int k);

}  // namespace sdde
