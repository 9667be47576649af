#include "sdde/likelihood.hpp"

#include "sdde/errors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdde {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_depth(const ObservationSeries& data, const PredictorCoefficients& c) {
  data.check(1);
  if (c.k < 1 || c.phi.size() != c.k) throw std::invalid_argument("malformed predictor coefficients");
  if (data.n() <= c.k)
    throw std::invalid_argument("pseudo-likelihood needs n > k (n = " + std::to_string(data.n()) +
                                ", k = " + std::to_string(c.k) + ")");
}

// x[i] - phi . (x[i-1], ..., x[i-k]) for 0-based target index i >= k.
double prediction_error(const Eigen::VectorXd& x, const Eigen::VectorXd& phi, int i) {
  double e = x(i);
  for (int j = 0; j < phi.size(); ++j) e -= phi(j) * x(i - 1 - j);
  return e;
}

}  // namespace

void ObservationSeries::check(int min_n) const {
  if (!(delta > 0) || !std::isfinite(delta)) throw std::invalid_argument("delta must be positive");
  if (n() < min_n)
    throw std::invalid_argument("series needs at least " + std::to_string(min_n) + " observations");
  if (!x.allFinite()) throw std::invalid_argument("series contains non-finite values");
}

double pairwise_sum(std::span<const double> terms) {
  if (terms.size() <= 8) {
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
  }
  const std::size_t half = terms.size() / 2;
  return pairwise_sum(terms.first(half)) + pairwise_sum(terms.subspan(half));
}

double exact_loglik(const ObservationSeries& data, const DelayModelSpec& model) {
  data.check(1);
  const int n = data.n();
  const AutocovGrid K = autocov_grid(model, data.delta, std::max(n - 1, 1));
  const Eigen::VectorXd& x = data.x;

  std::vector<double> terms;
  terms.reserve(n);
  double v = K.at(0);
  terms.push_back(-0.5 * (kLog2Pi + std::log(v)) - x(0) * x(0) / (2 * v));

  Eigen::VectorXd phi(0), next;
  for (int i = 1; i < n; ++i) {
    double num = K.at(i);
    for (int j = 1; j < i; ++j) num -= phi(j - 1) * K.at(i - j);
    const double pii = num / v;
    const double shrink = 1.0 - pii * pii;
    if (!(shrink >= kLadderFloor))
      throw LadderError(i, "Durbin-Levinson breakdown at level " + std::to_string(i));
    next.resize(i);
    for (int j = 1; j < i; ++j) next(j - 1) = phi(j - 1) - pii * phi(i - j - 1);
    next(i - 1) = pii;
    phi.swap(next);
    v *= shrink;
    double e = x(i);
    for (int j = 0; j < i; ++j) e -= phi(j) * x(i - 1 - j);
    terms.push_back(-0.5 * (kLog2Pi + std::log(v)) - e * e / (2 * v));
  }
  return pairwise_sum(terms);
}

double exact_loglik(const ObservationSeries& data, const DelayModelSpec& model,
                    const ParameterBinding& binding, const Eigen::VectorXd& theta) {
  return exact_loglik(data, binding.apply(model, theta));
}

double pseudo_loglik(const ObservationSeries& data, const PredictorCoefficients& c) {
  check_depth(data, c);
  if (!(c.v > 0)) throw LadderError(c.k, "prediction variance must be positive");
  const double head = -0.5 * (kLog2Pi + std::log(c.v));
  std::vector<double> terms;
  terms.reserve(data.n() - c.k);
  for (int i = c.k; i < data.n(); ++i) {
    const double e = prediction_error(data.x, c.phi, i);
    terms.push_back(head - e * e / (2 * c.v));
  }
  return pairwise_sum(terms);
}

Eigen::VectorXd pseudo_score(const ObservationSeries& data, const PredictorCoefficients& c) {
  check_depth(data, c);
  if (!c.has_grads()) throw std::invalid_argument("coefficients carry no gradients");
  const int p = static_cast<int>(c.dv.size());
  const int count = data.n() - c.k;
  // Sum the H-term components first, then apply the weights once.
  std::vector<double> we(static_cast<std::size_t>(c.k) * count), sq(count);
  for (int i = c.k; i < data.n(); ++i) {
    const double e = prediction_error(data.x, c.phi, i);
    for (int j = 0; j < c.k; ++j) we[static_cast<std::size_t>(j) * count + (i - c.k)] = data.x(i - 1 - j) * e;
    sq[i - c.k] = e * e - c.v;
  }
  Eigen::VectorXd hsum(c.k + 1);
  for (int j = 0; j < c.k; ++j)
    hsum(j) = pairwise_sum(std::span<const double>(we).subspan(static_cast<std::size_t>(j) * count, count));
  hsum(c.k) = pairwise_sum(sq);
  Eigen::VectorXd score(p);
  for (int q = 0; q < p; ++q)
    score(q) = c.dphi.row(q).dot(hsum.head(c.k)) / c.v + c.dv(q) * hsum(c.k) / (2 * c.v * c.v);
  return score;
}

PredictorCoefficients coefficients_at(const DelayModelSpec& model, double delta, int k) {
  return durbin_levinson(autocov_grid(model, delta, k), k);
}

PredictorCoefficients coefficients_at(const DelayModelSpec& model, const ParameterBinding& binding,
                                      double delta, int k) {
  return durbin_levinson_grad(autocov_grid(model, binding, delta, k), k);
}

}  // namespace sdde
