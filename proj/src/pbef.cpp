#include "sdde/pbef.hpp"

#include "sdde/errors.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sdde {

namespace {

// Rows: prediction error form, then the k window coordinates, over the
// positions (X_i, X_{i-1}, ..., X_{i-k}).
Eigen::MatrixXd form_matrix(const PredictorCoefficients& c) {
  const int k = c.k;
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(k + 1, k + 1);
  F(0, 0) = 1.0;
  F.block(0, 1, 1, k) = -c.phi.transpose();
  F.block(1, 1, k, k).setIdentity();
  return F;
}

// The two linear forms whose product is H component a.
std::pair<int, int> factors(int a, int k) { return a < k ? std::make_pair(a + 1, 0) : std::make_pair(0, 0); }

Eigen::MatrixXd cross_moment(const AutocovGrid& K, const Eigen::MatrixXd& F, int k, int j) {
  Eigen::MatrixXd T(k + 1, k + 1);
  for (int p = 0; p <= k; ++p)
    for (int q = 0; q <= k; ++q) T(p, q) = K.at(j + p - q);
  const Eigen::MatrixXd C = F * T * F.transpose();
  Eigen::MatrixXd E(k + 1, k + 1);
  for (int a = 0; a <= k; ++a) {
    const auto [a1, a2] = factors(a, k);
    for (int b = 0; b <= k; ++b) {
      const auto [b1, b2] = factors(b, k);
      E(a, b) = C(a1, b1) * C(a2, b2) + C(a1, b2) * C(a2, b1);
    }
  }
  return E;
}

void check_coverage(const AutocovGrid& K, int lag) {
  if (K.m() < lag)
    throw CoverageError("autocovariance grid reaches lag " + std::to_string(K.m()) + ", need " +
                        std::to_string(lag));
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

HTerms h_terms(const ObservationSeries& data, const PredictorCoefficients& c) {
  data.check(1);
  if (data.n() <= c.k) throw std::invalid_argument("H-terms need n > k");
  HTerms out;
  out.k = c.k;
  out.h.resize(c.k + 1, data.n() - c.k);
  for (int i = c.k; i < data.n(); ++i) {
    double e = data.x(i);
    for (int j = 0; j < c.k; ++j) e -= c.phi(j) * data.x(i - 1 - j);
    for (int j = 0; j < c.k; ++j) out.h(j, i - c.k) = data.x(i - 1 - j) * e;
    out.h(c.k, i - c.k) = e * e - c.v;
  }
  return out;
}

Eigen::VectorXd h_sum(const HTerms& terms) {
  Eigen::VectorXd s(terms.k + 1);
  std::vector<double> row(terms.count());
  for (int a = 0; a <= terms.k; ++a) {
    for (int i = 0; i < terms.count(); ++i) row[i] = terms.h(a, i);
    s(a) = pairwise_sum(row);
  }
  return s;
}

Eigen::MatrixXd sensitivity(const PredictorCoefficients& c, const Eigen::MatrixXd& Kmat) {
  if (!c.has_grads()) throw std::invalid_argument("sensitivity needs coefficient gradients");
  if (Kmat.rows() != c.k || Kmat.cols() != c.k) throw std::invalid_argument("Toeplitz matrix must be k x k");
  const int p = static_cast<int>(c.dv.size());
  Eigen::MatrixXd S(p, c.k + 1);
  S.leftCols(c.k) = -c.dphi * Kmat;
  S.col(c.k) = -c.dv;
  return S;
}

int numerical_rank(const Eigen::MatrixXd& m, double rel_tol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rel_tol * sv(0)) ++r;
  return r;
}

void require_full_rank(const Eigen::MatrixXd& S, const char* what) {
  const int r = numerical_rank(S);
  if (r < S.rows())
    throw NumericalError(std::string(what) + " has rank " + std::to_string(r) + " < p = " +
                         std::to_string(S.rows()) + "; parameters are not identifiable at this depth");
}

Eigen::MatrixXd m1(const PredictorCoefficients& c, const Eigen::MatrixXd& Kmat) {
  if (Kmat.rows() != c.k || Kmat.cols() != c.k) throw std::invalid_argument("Toeplitz matrix must be k x k");
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(c.k + 1, c.k + 1);
  M.topLeftCorner(c.k, c.k) = c.v * Kmat;
  M(c.k, c.k) = 2 * c.v * c.v;
  return M;
}

Eigen::MatrixXd lag_cross_moment(const AutocovGrid& K, const PredictorCoefficients& c, int j) {
  if (j < 0) throw std::invalid_argument("lag must be non-negative");
  check_coverage(K, j + c.k);
  return cross_moment(K, form_matrix(c), c.k, j);
}

M2Result m2_isserlis(const AutocovGrid& K, const PredictorCoefficients& c, int J) {
  const Eigen::MatrixXd F = form_matrix(c);
  const int k = c.k;
  check_coverage(K, k);
  const bool automatic = J < 0;
  const int last = automatic ? kM2LagCap : J;
  if (!automatic) check_coverage(K, J + k);
  // Every entry of E[H_i H_{i+j}^T] is a product of two covariances between
  // the error coefficients (1, -phi) and variables at least j - k lags apart,
  // so it is bounded by 2 (1 + |phi|_1)^4 T_j^2 with T_j = sup_{l >= j-k} |K(l)|.
  const int m = K.m();
  Eigen::VectorXd tail(m + 2);
  tail(m + 1) = 0.0;
  for (int l = m; l >= 0; --l) tail(l) = std::max(tail(l + 1), std::abs(K.values(l)));
  const double w = std::pow(1.0 + c.phi.cwiseAbs().sum(), 4);
  auto envelope = [&](int j) {
    const double t = tail(std::min(std::max(j - k, 0), m + 1));
    return 2 * w * t * t;
  };
  const double threshold = 1e-10 * cross_moment(K, F, k, 0).cwiseAbs().maxCoeff();
  M2Result out;
  out.M2 = Eigen::MatrixXd::Zero(k + 1, k + 1);
  bool converged = !automatic;
  for (int j = 1; j <= last; ++j) {
    if (automatic && j + k > m)
      throw CoverageError("autocovariance grid too short for the M2 truncation horizon");
    const Eigen::MatrixXd E = cross_moment(K, F, k, j);
    out.M2 += E + E.transpose();
    out.J = j;
    if (automatic && E.cwiseAbs().maxCoeff() < threshold && envelope(j + 1) < threshold) {
      converged = true;
      break;
    }
  }
  out.truncated_by_cap = automatic && !converged;
  // Omitted lags the grid covers; beyond the grid nothing is known.
  for (int j = out.J + 1; j + k <= m; ++j) out.tail_bound += 2 * envelope(j);
  if (out.truncated_by_cap && out.J + k >= m) out.tail_bound = std::numeric_limits<double>::infinity();
  out.M2 = symmetrize(out.M2);
  return out;
}

Eigen::MatrixXd m2_isserlis_finite(const AutocovGrid& K, const PredictorCoefficients& c, int n, int J) {
  const int count = n - c.k;
  if (count < 1) throw std::invalid_argument("need n > k");
  J = std::min(J, count - 1);
  check_coverage(K, J + c.k);
  const Eigen::MatrixXd F = form_matrix(c);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(c.k + 1, c.k + 1);
  for (int j = 1; j <= J; ++j) {
    const Eigen::MatrixXd E = cross_moment(K, F, c.k, j);
    M += (static_cast<double>(count - j) / count) * (E + E.transpose());
  }
  return symmetrize(M);
}

M2MonteCarlo m2_from_series(const std::vector<ObservationSeries>& series,
                            const PredictorCoefficients& c, const Eigen::MatrixXd& M1) {
  const int R = static_cast<int>(series.size());
  if (R < 2) throw std::invalid_argument("Monte Carlo moments need at least two replicates");
  const int d = c.k + 1;
  const int n = series.front().n();
  Eigen::MatrixXd sum_outer = Eigen::MatrixXd::Zero(d, d), sq_outer = sum_outer;
  Eigen::MatrixXd sum_lag0 = sum_outer, sq_lag0 = sum_outer;
  for (const auto& s : series) {
    if (s.n() != n) throw std::invalid_argument("replicate series differ in length");
    const HTerms H = h_terms(s, c);
    const Eigen::VectorXd z = h_sum(H) / std::sqrt(static_cast<double>(H.count()));
    const Eigen::MatrixXd outer = z * z.transpose();
    const Eigen::MatrixXd lag0 = H.h * H.h.transpose() / H.count();
    sum_outer += outer;
    sq_outer += outer.cwiseProduct(outer);
    sum_lag0 += lag0;
    sq_lag0 += lag0.cwiseProduct(lag0);
  }
  auto se = [R](const Eigen::MatrixXd& sum, const Eigen::MatrixXd& sq) {
    const Eigen::MatrixXd mean = sum / R;
    const Eigen::MatrixXd var = ((sq - R * mean.cwiseProduct(mean)) / (R - 1)).cwiseMax(0.0);
    return Eigen::MatrixXd((var / R).cwiseSqrt());
  };
  M2MonteCarlo out;
  out.nsim = R;
  out.n = n;
  out.Mbar = sum_outer / R;
  out.Mbar_se = se(sum_outer, sq_outer);
  out.M2 = out.Mbar - M1;
  out.M2_se = out.Mbar_se;
  out.lag0 = sum_lag0 / R;
  out.lag0_se = se(sum_lag0, sq_lag0);
  return out;
}

M2MonteCarlo m2_montecarlo(const DelayModelSpec& model, const PredictorCoefficients& c, double delta,
                           int nsim, std::uint64_t seed, const MonteCarloOptions& opt) {
  require_stationary(model);
  if (nsim < 2) throw std::invalid_argument("nsim must be at least 2");
  std::vector<ObservationSeries> series(nsim);
  parallel_for(nsim, opt.threads, [&](int r) {
    SimConfig cfg;
    cfg.model = model;
    cfg.h = opt.h;
    cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    series[r] = simulate_observations(cfg, delta, opt.n);
  });
  const AutocovGrid K = autocov_grid(model, delta, c.k);
  return m2_from_series(series, c, m1(c, K.toeplitz(c.k)));
}

Eigen::MatrixXd weights(const Eigen::MatrixXd& S, const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols() || S.cols() != M.rows()) throw std::invalid_argument("weight dimensions do not conform");
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) throw NumericalError("moment matrix is not positive definite");
  return -llt.solve(S.transpose()).transpose();
}

Eigen::VectorXd estimating_function(const Eigen::MatrixXd& A, const HTerms& terms) {
  if (A.cols() != terms.k + 1) throw std::invalid_argument("weight matrix has wrong column count");
  return A * h_sum(terms);
}

Sandwich sandwich(const Eigen::MatrixXd& A, const Eigen::MatrixXd& S, const Eigen::MatrixXd& Mbar) {
  if (A.rows() != S.rows() || A.cols() != S.cols() || Mbar.rows() != A.cols())
    throw std::invalid_argument("sandwich dimensions do not conform");
  Sandwich out;
  out.U = S * A.transpose();
  out.V = A * Mbar * A.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(out.U);
  if (!lu.isInvertible() || lu.rcond() < 1e-14)
    throw NumericalError("U = S A^T is singular; the weight choice does not identify theta");
  const Eigen::MatrixXd X = lu.solve(out.V);
  out.cov = symmetrize(lu.solve(X.transpose()).transpose());
  return out;
}

EfficiencyLoss efficiency_loss(const Eigen::MatrixXd& S, const Eigen::MatrixXd& M1, const Eigen::MatrixXd& M2) {
  const Eigen::MatrixXd Mbar = M1 + M2;
  const Eigen::MatrixXd A_opt = weights(S, Mbar);
  const Eigen::MatrixXd A_ps = weights(S, M1);
  EfficiencyLoss out;
  const Sandwich opt = sandwich(A_opt, S, Mbar);
  const Sandwich ps = sandwich(A_ps, S, Mbar);
  out.cov_opt = opt.cov;
  out.cov_pseudo = ps.cov;
  out.avar_opt = out.cov_opt.diagonal();
  out.avar_pseudo = out.cov_pseudo.diagonal();

  // cov = G Mbar G^T with G = U^{-1} A and G S^T = I, so the cross term is
  // cov_opt and the difference is (G~ - G*) Mbar (G~ - G*)^T.
  const Eigen::MatrixXd D = ps.U.fullPivLu().solve(A_ps) - opt.U.fullPivLu().solve(A_opt);
  const Eigen::MatrixXd R = D * Mbar.llt().matrixL();
  out.cov_gap = R * R.transpose();
  out.loss = (out.cov_gap.diagonal().array() / out.avar_pseudo.array()).matrix();

  const Eigen::MatrixXd info_opt = S * Mbar.llt().solve(S.transpose());
  out.info_gap = info_opt - out.cov_pseudo.inverse();

  Eigen::FullPivLU<Eigen::MatrixXd> lu2(M2);
  if (lu2.isInvertible() && lu2.rcond() > 1e-12) {
    const Eigen::MatrixXd B = A_ps * M2 * A_ps.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> luB(B);
    if (luB.isInvertible() && luB.rcond() > 1e-12) {
      const Eigen::MatrixXd W1 = A_ps * M1 * A_ps.transpose();
      const Eigen::MatrixXd first = (W1.inverse() + B.inverse()).inverse();
      const Eigen::MatrixXd inner = (M1.inverse() + M2.inverse()).inverse();
      out.info_gap_alt = first - A_ps * inner * A_ps.transpose();
    }
  }
  return out;
}

MomentMatrices moment_matrices(const DelayModelSpec& model, const ParameterBinding& binding,
                               double delta, int k) {
  MomentMatrices mm;
  const AutocovGrid g = autocov_grid(model, binding, delta, k);
  mm.coeffs = durbin_levinson_grad(g, k);
  mm.grid = autocov_grid(model, delta, k + kM2LagCap);
  const Eigen::MatrixXd Kmat = g.toeplitz(k);
  mm.S = sensitivity(mm.coeffs, Kmat);
  mm.M1 = m1(mm.coeffs, Kmat);
  const M2Result r = m2_isserlis(mm.grid, mm.coeffs);
  mm.M2 = r.M2;
  mm.J = r.J;
  mm.tail_bound = r.tail_bound;
  mm.Mbar = mm.M1 + mm.M2;
  return mm;
}

}  // namespace sdde
