#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace sdde::quad {

// Nodes and weights on [-1, 1].
struct Rule {
  std::vector<double> x;
  std::vector<double> w;
};

// Gauss-Legendre with n points; n in {7, 10, 15, 20, 25, 30}.
const Rule& gauss_legendre(int n);

// Integral of f over [lo, hi] with the n-point Gauss-Legendre rule.
double integrate_gl(const std::function<double(double)>& f, double lo, double hi, int n = 30);

struct VectorIntegral {
  Eigen::ArrayXd value;
  double error = 0.0;  // max-abs componentwise estimate
  int panels = 0;
};

// Globally adaptive Gauss-Kronrod (7/15) for a vector-valued integrand over
// [lo, hi], starting from equal panels no wider than `max_width`. Bisects the
// worst panel until the summed error estimate falls below `tol` or `max_panels`
// is reached; the caller checks `error`.
VectorIntegral integrate_gk15(const std::function<Eigen::ArrayXd(double)>& f, int dim, double lo,
                              double hi, double max_width, double tol, int max_panels);

// Barycentric interpolation on n Chebyshev-Lobatto nodes over [lo, hi].
class ChebyshevPiece {
 public:
  ChebyshevPiece() = default;
  ChebyshevPiece(double lo, double hi, int n);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& nodes() const { return nodes_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double operator()(double t) const;

 private:
  double lo_ = 0.0, hi_ = 0.0;
  std::vector<double> nodes_;
  std::vector<double> values_;
};

}  // namespace sdde::quad
