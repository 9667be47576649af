#pragma once

#include "sdde/model.hpp"
#include "sdde/quadrature.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace sdde {

// Covariance evaluated at a batch of non-negative lags.
using BatchCovFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using CovFn = std::function<double(double)>;

enum class AutocovMethod { ClosedForm, Numerical };

struct AutocovGrid {
  double delta = 1.0;
  Eigen::VectorXd values;  // K(j delta), j = 0..m
  Eigen::MatrixXd grads;   // p x (m+1); empty unless requested
  std::vector<std::string> params;
  std::vector<bool> one_sided;  // per parameter: boundary forced one-sided differences
  DelayModelSpec model;
  AutocovMethod method = AutocovMethod::ClosedForm;
  // Evaluates K off the grid with the same method.
  BatchCovFn source;

  int m() const { return static_cast<int>(values.size()) - 1; }
  bool has_grads() const { return grads.size() > 0; }
  double at(int j) const { return values(j < 0 ? -j : j); }
  // (K((i-j) delta))_{i,j < l}
  Eigen::MatrixXd toeplitz(int l) const;
  // (K(delta), ..., K(l delta))
  Eigen::VectorXd kappa(int l) const;
  Eigen::MatrixXd toeplitz_grad(int param, int l) const;
  Eigen::VectorXd kappa_grad(int param, int l) const;
};

// Exact stationary covariance of dX = (aX + bX(t-r))dt + sigma dW. Closed form
// on [0, r]; beyond r the delay equation is continued piecewise, one delay
// interval at a time, on Chebyshev pieces extended lazily as larger t is asked.
class TwoDelayCovariance {
 public:
  explicit TwoDelayCovariance(const TwoDelay& model);

  double operator()(double t) const;
  double variance() const { return k0_; }
  const TwoDelay& model() const { return m_; }

 private:
  struct Interval {
    std::vector<quad::ChebyshevPiece> pieces;
  };
  double base(double t) const;  // closed form on [0, r]
  double on_interval(int n, double t) const;
  void extend_to(int n) const;

  TwoDelay m_;
  double mu_ = 0.0;
  double k0_ = 0.0;
  int pieces_per_interval_ = 1;
  mutable std::vector<Interval> intervals_;  // intervals_[n-1] covers [n r, (n+1) r]
  std::unique_ptr<std::mutex> lock_;
};

double closed_form_two_delay(const TwoDelay& model, double t);

// a = 0 formulas, valid on [0, 2r].
double closed_form_zero_a(const TwoDelay& model, double t);

// Uniform kernel (a = 0) covariance on [0, r].
double closed_form_expkernel_a0(const ExpKernel& model, double t);

// Untruncated kernel (r = infinity), exact for every t.
double closed_form_expkernel_inf(const ExpKernel& model, double t);

// K(t) for arbitrary lags by frequency-domain quadrature.
Eigen::VectorXd numerical_autocov_at(const DelayModelSpec& model, const Eigen::VectorXd& t,
                                     double tol = 1e-13);
AutocovGrid numerical_autocov(const DelayModelSpec& model, double delta, int m);

// Closed form where one exists, numerical otherwise. Throws NonStationaryError
// unless the model is stationary.
AutocovGrid autocov_grid(const DelayModelSpec& model, double delta, int m);
// Same, with parameter gradients.
AutocovGrid autocov_grid(const DelayModelSpec& model, const ParameterBinding& binding,
                         double delta, int m);

// Throws NonStationaryError unless the model is (certifiably) stationary.
void require_stationary(const DelayModelSpec& model);

BatchCovFn covariance_function(const DelayModelSpec& model);

// dK/dt(t) - int K(t+s) a(ds), for t > 0.
double yw_residual(const BatchCovFn& K, const DelayModelSpec& model, double t);
double yw_residual(const CovFn& K, const DelayModelSpec& model, double t);
double yw_residual(const AutocovGrid& grid, double t);
// 2 int K(s) a(ds) + sigma^2.
double boundary_residual(const BatchCovFn& K, const DelayModelSpec& model);

struct AutocovGradient {
  Eigen::MatrixXd grad;  // p x (m+1)
  std::vector<bool> one_sided;
};

AutocovGradient autocov_grad(const DelayModelSpec& model, const ParameterBinding& binding,
                             double delta, int m);

}  // namespace sdde
