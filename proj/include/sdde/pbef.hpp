#pragma once

#include "sdde/autocov.hpp"
#include "sdde/likelihood.hpp"
#include "sdde/predictor.hpp"
#include "sdde/simulator.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace sdde {

// Column i - k holds H_i for i = k..n-1 (1-based i): the first k entries are
// the window X_{i:i+1-k} times the prediction error, the last is error^2 - v.
struct HTerms {
  int k = 0;
  Eigen::MatrixXd h;  // (k+1) x (n-k)
  int count() const { return static_cast<int>(h.cols()); }
};

HTerms h_terms(const ObservationSeries& data, const PredictorCoefficients& coeffs);
// Row-wise pairwise sums of the H-terms.
Eigen::VectorXd h_sum(const HTerms& terms);

// S = -(dphi * K_k, dv), p x (k+1).
Eigen::MatrixXd sensitivity(const PredictorCoefficients& coeffs, const Eigen::MatrixXd& Kmat);
// Numerical rank with singular values below rel_tol * largest treated as zero.
int numerical_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-10);
// Throws NumericalError when S has rank < p.
void require_full_rank(const Eigen::MatrixXd& S, const char* what = "sensitivity matrix");

// diag(v K_k, 2 v^2).
Eigen::MatrixXd m1(const PredictorCoefficients& coeffs, const Eigen::MatrixXd& Kmat);

// E[H_i H_{i+j}^T] from the covariance function alone (Isserlis).
Eigen::MatrixXd lag_cross_moment(const AutocovGrid& K, const PredictorCoefficients& coeffs, int j);

struct M2Result {
  Eigen::MatrixXd M2;
  int J = 0;                 // number of lags summed
  double tail_bound = 0.0;   // bound on the max-abs entry of the omitted sum over the grid's lags
  bool truncated_by_cap = false;
};

inline constexpr int kM2LagCap = 200;

// Sum over j >= 1 of E[H_k H_{k+j}^T] + E[H_{k+j} H_k^T]. With J < 0 the sum
// stops once the lag term and a bound on all later terms (from the tail of
// |K|) are below 1e-10 max|M1|, at most kM2LagCap lags; the grid must reach
// lag k + J.
M2Result m2_isserlis(const AutocovGrid& K, const PredictorCoefficients& coeffs, int J = -1);
// Finite-n version with the (n-k-j)/(n-k) weights of the scaled sum.
Eigen::MatrixXd m2_isserlis_finite(const AutocovGrid& K, const PredictorCoefficients& coeffs,
                                   int n, int J);

struct M2MonteCarlo {
  Eigen::MatrixXd Mbar;         // covariance of sum H_i / sqrt(n-k)
  Eigen::MatrixXd Mbar_se;
  Eigen::MatrixXd M2;           // Mbar - M1(coeffs)
  Eigen::MatrixXd M2_se;
  Eigen::MatrixXd lag0;         // mean of H_i H_i^T over windows
  Eigen::MatrixXd lag0_se;
  int nsim = 0;
  int n = 0;
};

// Moment estimates from independent replicate series of equal length.
M2MonteCarlo m2_from_series(const std::vector<ObservationSeries>& series,
                            const PredictorCoefficients& coeffs, const Eigen::MatrixXd& M1);

struct MonteCarloOptions {
  int n = 400;         // observations per replicate
  double h = 0.001;    // simulation step
  int threads = 0;
};

// Simulates nsim replicate series at the model and estimates Mbar_n and M2.
M2MonteCarlo m2_montecarlo(const DelayModelSpec& model, const PredictorCoefficients& coeffs,
                           double delta, int nsim, std::uint64_t seed,
                           const MonteCarloOptions& options = {});

// A = -S M^{-1}; M must be symmetric positive definite.
Eigen::MatrixXd weights(const Eigen::MatrixXd& S, const Eigen::MatrixXd& M);

// G_n = A sum_i H_i.
Eigen::VectorXd estimating_function(const Eigen::MatrixXd& A, const HTerms& terms);

struct Sandwich {
  Eigen::MatrixXd U;    // S A^T
  Eigen::MatrixXd V;    // A Mbar A^T
  Eigen::MatrixXd cov;  // U^{-1} V U^{-T}
};

Sandwich sandwich(const Eigen::MatrixXd& A, const Eigen::MatrixXd& S, const Eigen::MatrixXd& Mbar);

struct EfficiencyLoss {
  Eigen::VectorXd loss;         // 1 - avar_opt / avar_pseudo, per parameter (from cov_gap)
  Eigen::VectorXd avar_opt;
  Eigen::VectorXd avar_pseudo;
  Eigen::MatrixXd cov_opt;
  Eigen::MatrixXd cov_pseudo;
  Eigen::MatrixXd cov_gap;         // cov_pseudo - cov_opt without cancellation
  Eigen::MatrixXd info_gap;        // S Mbar^{-1} S^T - cov_pseudo^{-1}
  Eigen::MatrixXd info_gap_alt;    // rearranged form; empty when M2 or A~ M2 A~^T is singular
};

EfficiencyLoss efficiency_loss(const Eigen::MatrixXd& S, const Eigen::MatrixXd& M1,
                               const Eigen::MatrixXd& M2);

// Bundle of every moment quantity at one parameter point.
struct MomentMatrices {
  PredictorCoefficients coeffs;
  AutocovGrid grid;
  Eigen::MatrixXd S, M1, M2, Mbar;
  int J = 0;
  double tail_bound = 0.0;
};

MomentMatrices moment_matrices(const DelayModelSpec& model, const ParameterBinding& binding,
                               double delta, int k);

}  // namespace sdde
