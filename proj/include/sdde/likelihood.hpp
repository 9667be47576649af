#pragma once

#include "sdde/model.hpp"
#include "sdde/predictor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>

namespace sdde {

// X(delta), X(2 delta), ..., X(n delta).
struct ObservationSeries {
  double delta = 1.0;
  Eigen::VectorXd x;
  std::optional<std::uint64_t> seed;
  std::optional<DelayModelSpec> source_model;

  int n() const { return static_cast<int>(x.size()); }
  // Throws std::invalid_argument unless delta > 0, n >= 1 and all values finite.
  void check(int min_n = 2) const;
};

// Fixed-order pairwise summation; the result does not depend on how the terms
// were produced.
double pairwise_sum(std::span<const double> terms);

// Exact Gaussian log-likelihood including the stationary density of X(delta).
// Memory is O(n): the prediction ladder is advanced one level per observation.
double exact_loglik(const ObservationSeries& data, const DelayModelSpec& model);
double exact_loglik(const ObservationSeries& data, const DelayModelSpec& model,
                    const ParameterBinding& binding, const Eigen::VectorXd& theta);

// Depth-k pseudo-log-likelihood; excludes the density of the first k values.
double pseudo_loglik(const ObservationSeries& data, const PredictorCoefficients& coeffs);
// Gradient of pseudo_loglik; coeffs must carry dphi and dv.
Eigen::VectorXd pseudo_score(const ObservationSeries& data, const PredictorCoefficients& coeffs);

// Convenience: builds the grid (with gradients when a binding is supplied) and
// coefficients at the model's current parameters.
PredictorCoefficients coefficients_at(const DelayModelSpec& model, double delta, int k);
PredictorCoefficients coefficients_at(const DelayModelSpec& model, const ParameterBinding& binding,
                                      double delta, int k);

}  // namespace sdde
