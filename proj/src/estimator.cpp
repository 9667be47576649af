#include "sdde/estimator.hpp"

#include "sdde/errors.hpp"
#include "sdde/simulator.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>

namespace sdde {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Problem {
  const ObservationSeries& data;
  const DelayModelSpec& model;
  const ParameterBinding& binding;
  int k;
  const EstimatorOptions& opt;

  int count() const { return data.n() - k; }
  bool feasible(const Eigen::VectorXd& th) const { return sdde::feasible(model, binding, th, opt.margin); }
  DelayModelSpec at(const Eigen::VectorXd& th) const { return binding.apply(model, th); }
};

void check_problem(const Problem& pr) {
  pr.data.check(2);
  if (pr.k < 1) throw std::invalid_argument("depth k must be >= 1");
  if (pr.data.n() <= pr.k) throw std::invalid_argument("estimation needs n > k");
  pr.binding.check(pr.model);
  if (!pr.feasible(pr.binding.theta(pr.model)))
    throw std::invalid_argument("initial parameter lies outside the stationarity region or bounds");
}

// Draws a feasible start around theta0 for restart `attempt`.
Eigen::VectorXd restart_point(const Problem& pr, const Eigen::VectorXd& theta0, int attempt) {
  std::mt19937_64 rng(derive_seed(pr.opt.restart_seed, static_cast<std::uint64_t>(attempt)));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int tries = 0; tries < 200; ++tries) {
    Eigen::VectorXd th = theta0;
    const double spread = 0.2 / (1.0 + tries / 50.0);
    for (Eigen::Index i = 0; i < th.size(); ++i)
      th(i) += spread * std::max(std::abs(theta0(i)), 0.1) * normal(rng);
    if (pr.feasible(th)) return th;
  }
  return theta0;
}

bool near_boundary(const DelayModelSpec& m) {
  RootTestOptions o;
  o.compute_margin = true;
  try {
    const auto v = is_stationary(m, o);
    return !v.stationary() || v.margin < 1e-4;
  } catch (const std::exception&) {
    return true;
  }
}

// ---------------------------------------------------------------------------
// Pseudo-likelihood ascent

struct Eval {
  bool ok = false;
  double f = 0.0;
  Eigen::VectorXd g;
};

Eval evaluate_pseudo(const Problem& pr, const Eigen::VectorXd& th) {
  Eval e;
  try {
    const auto m = pr.at(th);
    const auto c = coefficients_at(m, pr.binding, pr.data.delta, pr.k);
    e.f = pseudo_loglik(pr.data, c) / pr.count();
    e.g = pseudo_score(pr.data, c) / pr.count();
    e.ok = std::isfinite(e.f) && e.g.allFinite();
  } catch (const NumericalError&) {
    e.ok = false;
  }
  return e;
}

struct Attempt {
  Eigen::VectorXd theta;
  Eval at;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

Attempt bfgs(const Problem& pr, const Eigen::VectorXd& start) {
  const int p = static_cast<int>(start.size());
  Attempt out;
  out.theta = start;
  out.at = evaluate_pseudo(pr, start);
  if (!out.at.ok) {
    out.message = "objective not computable at the starting point";
    return out;
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(p, p);
  bool fresh = true;
  for (int it = 0; it < pr.opt.max_iter; ++it) {
    out.iterations = it;
    const Eigen::VectorXd& g = out.at.g;
    if (g.norm() < pr.opt.score_tol) {
      out.converged = true;
      return out;
    }
    Eigen::VectorXd d = H * g;
    if (!(g.dot(d) > 0)) {
      H.setIdentity();
      fresh = true;
      d = g;
    }
    if (fresh) {
      // First step of a fresh approximation: limit the move to a modest length.
      const double len = d.norm();
      const double cap = 0.1 * std::max(1.0, out.theta.norm());
      if (len > cap) d *= cap / len;
    }
    const double slope = g.dot(d);
    double alpha = 1.0;
    bool accepted = false;
    Eval next;
    Eigen::VectorXd th_next;
    Eval best_small_grad;
    Eigen::VectorXd th_small_grad;
    for (int ls = 0; ls < 50; ++ls, alpha *= 0.5) {
      th_next = out.theta + alpha * d;
      if (!pr.feasible(th_next)) continue;
      next = evaluate_pseudo(pr, th_next);
      if (!next.ok) continue;
      if (next.f >= out.at.f + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      // Near the optimum the objective is flat to rounding; a smaller score
      // is then the reliable sign of progress.
      const double flat = 64 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(out.at.f));
      if (next.f >= out.at.f - flat && next.g.norm() < g.norm() &&
          (!best_small_grad.ok || next.g.norm() < best_small_grad.g.norm())) {
        best_small_grad = next;
        th_small_grad = th_next;
      }
    }
    if (!accepted && best_small_grad.ok) {
      next = best_small_grad;
      th_next = th_small_grad;
      accepted = true;
    }
    if (!accepted) {
      out.message = "line search failed";
      out.converged = g.norm() < pr.opt.score_tol;
      return out;
    }
    const Eigen::VectorXd s = th_next - out.theta;
    const Eigen::VectorXd y = -(next.g - g);  // gradient change of the minimized -f
    out.theta = th_next;
    out.at = next;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) H = (sy / y.squaredNorm()) * Eigen::MatrixXd::Identity(p, p);
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
      fresh = false;
    }
    if (s.norm() < pr.opt.step_tol * (1.0 + out.theta.norm())) {
      out.converged = out.at.g.norm() < pr.opt.score_tol;
      out.iterations = it + 1;
      if (!out.converged) out.message = "parameter step below tolerance";
      return out;
    }
  }
  out.iterations = pr.opt.max_iter;
  out.converged = out.at.g.norm() < pr.opt.score_tol;
  if (!out.converged) out.message = "maximum iterations reached";
  return out;
}

// ---------------------------------------------------------------------------
// Root finding for estimating equations

using EqFn = std::function<std::optional<Eigen::VectorXd>(const Eigen::VectorXd&)>;

struct RootAttempt {
  Eigen::VectorXd theta;
  double norm = kNaN;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

RootAttempt damped_newton(const Problem& pr, const EqFn& G, const Eigen::VectorXd& start) {
  const int p = static_cast<int>(start.size());
  const double scale = pr.count();
  RootAttempt out;
  out.theta = start;
  auto g0 = G(start);
  if (!g0) {
    out.message = "estimating function not computable at the starting point";
    return out;
  }
  Eigen::VectorXd g = *g0;
  out.norm = g.norm() / scale;
  for (int it = 0; it < pr.opt.max_iter; ++it) {
    out.iterations = it;
    if (out.norm < pr.opt.score_tol) {
      out.converged = true;
      return out;
    }
    Eigen::MatrixXd J(p, p);
    for (int i = 0; i < p; ++i) {
      const double h = 1e-6 * std::max(std::abs(out.theta(i)), 1.0);
      Eigen::VectorXd up = out.theta, dn = out.theta;
      up(i) += h;
      dn(i) -= h;
      std::optional<Eigen::VectorXd> gu, gd;
      if (pr.feasible(up)) gu = G(up);
      if (pr.feasible(dn)) gd = G(dn);
      if (gu && gd)
        J.col(i) = (*gu - *gd) / (2 * h);
      else if (gu)
        J.col(i) = (*gu - g) / h;
      else if (gd)
        J.col(i) = (g - *gd) / h;
      else {
        out.message = "no feasible difference step for the Jacobian";
        return out;
      }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (!lu.isInvertible() || lu.rcond() < 1e-13) {
      out.message = "singular Jacobian of the estimating function";
      return out;
    }
    const Eigen::VectorXd step = lu.solve(-g);
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd th_next, g_next;
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      th_next = out.theta + alpha * step;
      if (!pr.feasible(th_next)) continue;
      auto gn = G(th_next);
      if (!gn) continue;
      if (gn->norm() < (1 - 1e-4 * alpha) * g.norm()) {
        g_next = *gn;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.message = "damped Newton step failed to reduce the estimating function";
      out.converged = out.norm < pr.opt.score_tol;
      return out;
    }
    const double moved = (th_next - out.theta).norm();
    out.theta = th_next;
    g = g_next;
    out.norm = g.norm() / scale;
    if (moved < pr.opt.step_tol * (1.0 + out.theta.norm())) {
      out.converged = out.norm < pr.opt.score_tol;
      out.iterations = it + 1;
      if (!out.converged) out.message = "parameter step below tolerance";
      return out;
    }
  }
  out.iterations = pr.opt.max_iter;
  out.converged = out.norm < pr.opt.score_tol;
  if (!out.converged) out.message = "maximum iterations reached";
  return out;
}

RootAttempt solve_with_restarts(const Problem& pr, const EqFn& G, const Eigen::VectorXd& start) {
  RootAttempt best = damped_newton(pr, G, start);
  for (int r = 0; r < pr.opt.restarts && !best.converged; ++r) {
    RootAttempt a = damped_newton(pr, G, restart_point(pr, start, r + 1));
    a.iterations += best.iterations;
    if (a.converged || (std::isfinite(a.norm) && !(a.norm >= best.norm))) best = a;
    else best.iterations = a.iterations;
  }
  return best;
}

Eigen::VectorXd optimal_equation(const Problem& pr, const Eigen::VectorXd& th) {
  const auto m = pr.at(th);
  const MomentMatrices mm = moment_matrices(m, pr.binding, pr.data.delta, pr.k);
  const Eigen::MatrixXd A = weights(mm.S, pr.opt.zero_m2 ? mm.M1 : mm.Mbar);
  return estimating_function(A, h_terms(pr.data, mm.coeffs));
}

Eigen::VectorXd frozen_equation(const Problem& pr, const Eigen::MatrixXd& A, const Eigen::VectorXd& th) {
  const auto c = coefficients_at(pr.at(th), pr.data.delta, pr.k);
  return estimating_function(A, h_terms(pr.data, c));
}

EqFn guarded(std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f) {
  return [f = std::move(f)](const Eigen::VectorXd& th) -> std::optional<Eigen::VectorXd> {
    try {
      Eigen::VectorXd v = f(th);
      if (!v.allFinite()) return std::nullopt;
      return v;
    } catch (const NumericalError&) {
      return std::nullopt;
    }
  };
}

void fill_common(EstimateResult& r, const Problem& pr) {
  r.names = pr.binding.names();
  r.k = pr.k;
  r.near_boundary = near_boundary(pr.at(r.theta));
}

void attach_se(EstimateResult& r, const Problem& pr,
               const std::function<Eigen::MatrixXd(const MomentMatrices&)>& weight_choice) {
  if (!pr.opt.compute_se) return;
  const int p = static_cast<int>(r.theta.size());
  try {
    const MomentMatrices mm = moment_matrices(pr.at(r.theta), pr.binding, pr.data.delta, pr.k);
    const Sandwich sw = sandwich(weight_choice(mm), mm.S, mm.Mbar);
    r.cov = sw.cov / pr.data.n();
    r.se = r.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  } catch (const NumericalError& e) {
    r.cov = Eigen::MatrixXd::Constant(p, p, kNaN);
    r.se = Eigen::VectorXd::Constant(p, kNaN);
    if (!r.message.empty()) r.message += "; ";
    r.message += std::string("standard errors unavailable: ") + e.what();
  }
}

}  // namespace

std::string method_name(EstimatorMethod m) {
  switch (m) {
    case EstimatorMethod::PseudoML: return "pseudo-ML";
    case EstimatorMethod::OptimalPBEF: return "optimal-PBEF";
    case EstimatorMethod::TwoStep: return "two-step";
    case EstimatorMethod::MomentPilot: return "moment-pilot";
  }
  return "unknown";
}

EstimateResult maximize_pseudo_lik(const ObservationSeries& data, const DelayModelSpec& model,
                                   const ParameterBinding& binding, int k, const EstimatorOptions& opt) {
  const Problem pr{data, model, binding, k, opt};
  check_problem(pr);
  const Eigen::VectorXd theta0 = binding.theta(model);
  Attempt best = bfgs(pr, theta0);
  int iterations = best.iterations;
  for (int r = 0; r < opt.restarts && !best.converged; ++r) {
    Attempt a = bfgs(pr, restart_point(pr, theta0, r + 1));
    iterations += a.iterations;
    if (a.at.ok && (!best.at.ok || a.converged || a.at.f > best.at.f)) best = a;
  }
  EstimateResult res;
  res.method = EstimatorMethod::PseudoML;
  res.theta = best.theta;
  res.converged = best.converged;
  res.objective = best.at.ok ? best.at.f : kNaN;
  res.score_norm = best.at.ok ? best.at.g.norm() : kNaN;
  res.iterations = iterations;
  res.message = best.message;
  fill_common(res, pr);
  attach_se(res, pr, [](const MomentMatrices& mm) { return weights(mm.S, mm.M1); });
  return res;
}

EstimateResult solve_optimal(const ObservationSeries& data, const DelayModelSpec& model,
                             const ParameterBinding& binding, int k, const EstimatorOptions& opt) {
  const Problem pr{data, model, binding, k, opt};
  check_problem(pr);
  const EqFn G = guarded([&pr](const Eigen::VectorXd& th) { return optimal_equation(pr, th); });
  const RootAttempt a = solve_with_restarts(pr, G, binding.theta(model));
  EstimateResult res;
  res.method = EstimatorMethod::OptimalPBEF;
  res.theta = a.theta;
  res.converged = a.converged;
  res.score_norm = a.norm;
  res.iterations = a.iterations;
  res.message = a.message;
  fill_common(res, pr);
  const bool zero = opt.zero_m2;
  attach_se(res, pr, [zero](const MomentMatrices& mm) { return weights(mm.S, zero ? mm.M1 : mm.Mbar); });
  return res;
}

EstimateResult solve_two_step(const ObservationSeries& data, const DelayModelSpec& model,
                              const ParameterBinding& binding, int k, const EstimateResult& pilot,
                              const EstimatorOptions& opt) {
  if (pilot.theta.size() != binding.size()) throw std::invalid_argument("pilot has wrong dimension");
  const DelayModelSpec start = binding.apply(model, pilot.theta);
  const Problem pr{data, start, binding, k, opt};
  check_problem(pr);
  const MomentMatrices mm = moment_matrices(start, binding, data.delta, k);
  const Eigen::MatrixXd A = weights(mm.S, opt.zero_m2 ? mm.M1 : mm.Mbar);
  if (numerical_rank(A) < binding.size())
    throw NumericalError("frozen weight matrix has rank below the number of parameters");
  const EqFn G = guarded([&pr, &A](const Eigen::VectorXd& th) { return frozen_equation(pr, A, th); });
  const RootAttempt a = solve_with_restarts(pr, G, pilot.theta);
  EstimateResult res;
  res.method = EstimatorMethod::TwoStep;
  res.theta = a.theta;
  res.converged = a.converged;
  res.score_norm = a.norm;
  res.iterations = a.iterations;
  res.message = a.message;
  res.weights = A;
  fill_common(res, pr);
  attach_se(res, pr, [&A](const MomentMatrices&) { return A; });
  return res;
}

EstimateResult moment_pilot(const ObservationSeries& data, const DelayModelSpec& model,
                            const ParameterBinding& binding, const EstimatorOptions& opt) {
  data.check(2);
  binding.check(model);
  const int p = binding.size();
  const int lags = std::max(2, p);
  if (data.n() <= lags) throw std::invalid_argument("moment pilot needs more observations than lags");
  const Problem pr{data, model, binding, 1, opt};
  const Eigen::VectorXd target = empirical_autocov(data, lags, 1).value;
  const double scale = std::max(std::abs(target(0)), 1e-300);

  auto residual = [&](const Eigen::VectorXd& th) -> std::optional<Eigen::VectorXd> {
    try {
      const AutocovGrid g = autocov_grid(pr.at(th), data.delta, lags);
      return Eigen::VectorXd((g.values - target) / scale);
    } catch (const NumericalError&) {
      return std::nullopt;
    }
  };

  Eigen::VectorXd th = binding.theta(model);
  if (!pr.feasible(th)) throw std::invalid_argument("initial parameter lies outside the stationarity region");
  auto r = residual(th);
  if (!r) throw NumericalError("moment residual not computable at the starting point");
  double cost = r->squaredNorm();
  double lambda = 1e-3;
  bool converged = false;
  int it = 0;
  for (; it < 200 && !converged; ++it) {
    Eigen::MatrixXd J(lags + 1, p);
    for (int i = 0; i < p; ++i) {
      const double h = 1e-6 * std::max(std::abs(th(i)), 1.0);
      Eigen::VectorXd up = th;
      up(i) += h;
      std::optional<Eigen::VectorXd> ru;
      if (pr.feasible(up)) ru = residual(up);
      if (ru) {
        J.col(i) = (*ru - *r) / h;
      } else {
        Eigen::VectorXd dn = th;
        dn(i) -= h;
        auto rd = pr.feasible(dn) ? residual(dn) : std::nullopt;
        if (!rd) throw NumericalError("no feasible difference step in the moment pilot");
        J.col(i) = (*r - *rd) / h;
      }
    }
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd Jtr = J.transpose() * *r;
    bool improved = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd Aug = JtJ;
      Aug.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = Aug.ldlt().solve(-Jtr);
      const Eigen::VectorXd cand = th + step;
      std::optional<Eigen::VectorXd> rc;
      if (pr.feasible(cand)) rc = residual(cand);
      if (rc && rc->squaredNorm() < cost) {
        const double gain = cost - rc->squaredNorm();
        th = cand;
        r = rc;
        cost = rc->squaredNorm();
        lambda = std::max(lambda / 3, 1e-12);
        improved = true;
        if (gain < 1e-14 * std::max(cost, 1e-300) || step.norm() < opt.step_tol * (1 + th.norm()) ||
            cost < 1e-28)
          converged = true;
        break;
      }
      lambda *= 4;
    }
    if (!improved) converged = true;  // no descent left: stationary point of the fit
  }
  EstimateResult res;
  res.method = EstimatorMethod::MomentPilot;
  res.theta = th;
  res.converged = converged;
  res.objective = cost;
  res.score_norm = (2 * (r ? r->norm() : 0.0));
  res.iterations = it;
  res.names = binding.names();
  res.k = 0;
  res.near_boundary = near_boundary(pr.at(th));
  return res;
}

Eigen::VectorXd estimating_equation(const ObservationSeries& data, const DelayModelSpec& model,
                                    const ParameterBinding& binding, int k, const EstimateResult& result,
                                    const EstimatorOptions& opt) {
  const Problem pr{data, model, binding, k, opt};
  switch (result.method) {
    case EstimatorMethod::PseudoML: {
      const auto c = coefficients_at(pr.at(result.theta), binding, data.delta, k);
      return pseudo_score(data, c);
    }
    case EstimatorMethod::OptimalPBEF: return optimal_equation(pr, result.theta);
    case EstimatorMethod::TwoStep: return frozen_equation(pr, result.weights, result.theta);
    case EstimatorMethod::MomentPilot: break;
  }
  throw std::invalid_argument("moment pilot has no estimating equation");
}

}  // namespace sdde
