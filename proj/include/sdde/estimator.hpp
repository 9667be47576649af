#pragma once

#include "sdde/likelihood.hpp"
#include "sdde/model.hpp"
#include "sdde/pbef.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace sdde {

enum class EstimatorMethod { PseudoML, OptimalPBEF, TwoStep, MomentPilot };

std::string method_name(EstimatorMethod m);

struct EstimateResult {
  EstimatorMethod method = EstimatorMethod::PseudoML;
  std::vector<std::string> names;
  Eigen::VectorXd theta;
  bool converged = false;
  bool near_boundary = false;
  double score_norm = 0.0;  // ||estimating function|| / (n - k)
  double objective = 0.0;   // pseudo-log-likelihood / (n - k) for pseudo-ML
  int iterations = 0;
  int k = 0;
  Eigen::MatrixXd cov;  // asymptotic covariance divided by n
  Eigen::VectorXd se;
  std::string message;
  // Frozen weights of a two-step solve (for re-checking the equation).
  Eigen::MatrixXd weights;
};

struct EstimatorOptions {
  int max_iter = 200;
  double score_tol = 1e-8;   // on ||score|| / (n - k)
  double step_tol = 1e-10;
  int restarts = 5;
  double margin = 1e-6;      // stationarity margin kept by every iterate
  std::uint64_t restart_seed = 0x5dde;
  bool compute_se = true;
  bool zero_m2 = false;      // optimal weights with M2 forced to 0
};

// The model supplies the family and fixed fields; its free fields are the
// starting point.
EstimateResult maximize_pseudo_lik(const ObservationSeries& data, const DelayModelSpec& model,
                                   const ParameterBinding& binding, int k,
                                   const EstimatorOptions& options = {});

EstimateResult solve_optimal(const ObservationSeries& data, const DelayModelSpec& model,
                             const ParameterBinding& binding, int k,
                             const EstimatorOptions& options = {});

EstimateResult solve_two_step(const ObservationSeries& data, const DelayModelSpec& model,
                              const ParameterBinding& binding, int k, const EstimateResult& pilot,
                              const EstimatorOptions& options = {});

// Least-squares match of K(0), K(delta), K(2 delta) (more lags when p > 2) to
// the empirical autocovariances.
EstimateResult moment_pilot(const ObservationSeries& data, const DelayModelSpec& model,
                            const ParameterBinding& binding, const EstimatorOptions& options = {});

// Estimating function of a result re-evaluated from scratch at its theta.
Eigen::VectorXd estimating_equation(const ObservationSeries& data, const DelayModelSpec& model,
                                    const ParameterBinding& binding, int k,
                                    const EstimateResult& result, const EstimatorOptions& options = {});

}  // namespace sdde
