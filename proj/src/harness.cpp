#include "sdde/harness.hpp"

#include "sdde/autocov.hpp"
#include "sdde/csv.hpp"
#include "sdde/errors.hpp"
#include "sdde/simulator.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace sdde {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigma_from(const json& j, double fallback) {
  if (j.contains("sigma2") && j.contains("sigma"))
    throw std::invalid_argument("model gives both sigma and sigma2");
  if (j.contains("sigma2")) {
    const double s2 = j.at("sigma2").get<double>();
    if (!(s2 > 0)) throw std::invalid_argument("sigma2 must be positive");
    return std::sqrt(s2);
  }
  if (j.contains("sigma")) return j.at("sigma").get<double>();
  return fallback;
}

double delay_from(const json& j, double fallback) {
  if (!j.contains("r")) return fallback;
  const json& r = j.at("r");
  if (r.is_null() || (r.is_string() && (r == "inf" || r == "infinity")))
    return std::numeric_limits<double>::infinity();
  return r.get<double>();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

double field_or_nan(const DelayModelSpec& m, const char* path) {
  try {
    return get_field(m, path);
  } catch (const std::invalid_argument&) {
    return kNaN;
  }
}

EstimatorMethod parse_method(const std::string& s) {
  if (s == "pseudo-ML" || s == "pseudo" || s == "pseudo-ml") return EstimatorMethod::PseudoML;
  if (s == "optimal-PBEF" || s == "optimal") return EstimatorMethod::OptimalPBEF;
  if (s == "two-step") return EstimatorMethod::TwoStep;
  throw std::invalid_argument("unknown estimator method '" + s + "'");
}

int n_for_product(double product, double delta) {
  const double q = product / delta;
  const double rq = std::round(q);
  if (std::abs(q - rq) > 1e-9 * std::max(1.0, q))
    throw std::invalid_argument("n * delta = " + csv::num(product) + " is not attainable at delta = " +
                                csv::num(delta));
  return static_cast<int>(rq);
}

}  // namespace

DelayModelSpec model_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("model must be a JSON object");
  const std::string family = j.value("family", std::string("two_delay"));
  DelayModelSpec m;
  if (family == "two_delay") {
    TwoDelay t;
    t.a = j.value("a", 0.0);
    t.b = j.value("b", 0.0);
    t.r = delay_from(j, 1.0);
    t.sigma = sigma_from(j, 1.0);
    m = t;
  } else if (family == "multi_delay") {
    MultiDelay md;
    md.alphas = j.at("alphas").get<std::vector<double>>();
    md.delays = j.at("delays").get<std::vector<double>>();
    md.sigma = sigma_from(j, 1.0);
    m = md;
  } else if (family == "exp_kernel") {
    ExpKernel e;
    e.a = j.value("a", 0.0);
    e.b = j.value("b", 1.0);
    e.r = delay_from(j, 1.0);
    e.sigma = sigma_from(j, 1.0);
    m = e;
  } else {
    throw std::invalid_argument("unknown model family '" + family + "'");
  }
  validate(m);
  return m;
}

json model_to_json(const DelayModelSpec& model) {
  json j;
  j["family"] = family_name(model);
  std::visit(
      [&j](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MultiDelay>) {
          j["alphas"] = m.alphas;
          j["delays"] = m.delays;
        } else {
          j["a"] = m.a;
          j["b"] = m.b;
          if (std::isfinite(m.r))
            j["r"] = m.r;
          else
            j["r"] = "inf";
        }
        j["sigma2"] = m.sigma * m.sigma;
      },
      model);
  return j;
}

ParameterBinding binding_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("'free' must be a non-empty list");
  std::vector<ParameterSlot> slots;
  for (const auto& e : j) {
    ParameterSlot s;
    if (e.is_string()) {
      s.path = e.get<std::string>();
    } else {
      s.path = e.at("path").get<std::string>();
      s.lower = e.value("lower", s.lower);
      s.upper = e.value("upper", s.upper);
    }
    slots.push_back(s);
  }
  return ParameterBinding(std::move(slots));
}

StudyConfig study_config_from_json(const json& j) {
  StudyConfig c;
  c.model = model_from_json(j.at("model"));
  c.binding = binding_from_json(j.value("free", json::array({"a", "b"})));
  if (j.contains("product")) c.product = j.at("product").get<double>();
  if (j.contains("cells")) {
    for (const auto& e : j.at("cells")) {
      StudyCell cell;
      cell.delta = e.at("delta").get<double>();
      if (e.contains("n"))
        cell.n = e.at("n").get<int>();
      else if (c.product)
        cell.n = n_for_product(*c.product, cell.delta);
      else
        throw std::invalid_argument("cell needs n or a global product");
      c.cells.push_back(cell);
    }
  }
  if (j.contains("deltas")) {
    if (!c.product) throw std::invalid_argument("'deltas' requires 'product'");
    for (double d : j.at("deltas").get<std::vector<double>>()) c.cells.push_back({d, n_for_product(*c.product, d)});
  }
  c.depths = j.value("depths", c.depths);
  c.replications = j.value("replications", c.replications);
  c.h = j.value("h", c.h);
  c.warmup = j.value("warmup", c.warmup);
  c.seed = j.value("seed", c.seed);
  c.method = parse_method(j.value("method", std::string("pseudo-ML")));
  const std::string init = j.value("init", std::string("pilot"));
  if (init != "pilot" && init != "truth") throw std::invalid_argument("init must be 'pilot' or 'truth'");
  c.pilot_init = init == "pilot";
  c.compute_se = j.value("standard_errors", c.compute_se);
  c.threads = j.value("threads", c.threads);
  c.out = j.value("out", c.out);
  return c;
}

void check_study_config(const StudyConfig& c) {
  if (c.replications < 1) throw std::invalid_argument("replications must be >= 1");
  if (c.cells.empty()) throw std::invalid_argument("study has no cells");
  if (c.depths.empty()) throw std::invalid_argument("study has no depths");
  if (!(c.h > 0)) throw std::invalid_argument("h must be positive");
  int kmax = 0;
  for (int k : c.depths) {
    if (k < 1) throw std::invalid_argument("depths must be >= 1");
    kmax = std::max(kmax, k);
  }
  for (const auto& cell : c.cells) {
    if (!(cell.delta > 0)) throw std::invalid_argument("cell delta must be positive");
    const double q = cell.delta / c.h;
    if (std::abs(q - std::round(q)) > 1e-9 * std::max(1.0, q) || std::round(q) < 1)
      throw std::invalid_argument("cell delta " + csv::num(cell.delta) + " is not a multiple of h");
    if (cell.n <= kmax + 1) throw std::invalid_argument("cell n must exceed the largest depth + 1");
    if (c.product && std::abs(cell.n * cell.delta - *c.product) > 1e-9 * *c.product)
      throw std::invalid_argument("cell violates the fixed n * delta product");
  }
  c.binding.check(c.model);
  require_stationary(c.model);
}

StudyResult run_study(const StudyConfig& c) {
  check_study_config(c);
  const int R = c.replications;
  const int nk = static_cast<int>(c.depths.size());
  const int jobs = static_cast<int>(c.cells.size()) * R;
  StudyResult res;
  res.names = c.binding.names();
  res.cells = c.cells;
  res.raw.resize(static_cast<std::size_t>(jobs) * nk);

  parallel_for(jobs, c.threads, [&](int job) {
    const int cell = job / R, rep = job % R;
    const std::uint64_t seed = derive_seed(c.seed, static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(rep));
    ReplicateEstimate* slot = &res.raw[static_cast<std::size_t>(job) * nk];
    for (int ki = 0; ki < nk; ++ki) {
      slot[ki].cell = cell;
      slot[ki].k = c.depths[ki];
      slot[ki].replicate = rep;
      slot[ki].seed = seed;
    }
    ObservationSeries data;
    try {
      SimConfig sim;
      sim.model = c.model;
      sim.h = c.h;
      sim.warmup = c.warmup;
      sim.seed = seed;
      data = simulate_observations(sim, c.cells[cell].delta, c.cells[cell].n);
    } catch (const std::exception& e) {
      for (int ki = 0; ki < nk; ++ki) slot[ki].message = std::string("simulation failed: ") + e.what();
      return;
    }
    DelayModelSpec start = c.model;
    if (c.pilot_init) {
      try {
        const EstimateResult pilot = moment_pilot(data, c.model, c.binding);
        if (feasible(c.model, c.binding, pilot.theta, 1e-3)) start = c.binding.apply(c.model, pilot.theta);
      } catch (const std::exception&) {
        // fall back to theta_0
      }
    }
    for (int ki = 0; ki < nk; ++ki) {
      EstimatorOptions opt;
      opt.restart_seed = derive_seed(seed, static_cast<std::uint64_t>(c.depths[ki]));
      opt.compute_se = c.compute_se;
      try {
        EstimateResult r;
        switch (c.method) {
          case EstimatorMethod::PseudoML:
            r = maximize_pseudo_lik(data, start, c.binding, c.depths[ki], opt);
            break;
          case EstimatorMethod::OptimalPBEF:
            r = solve_optimal(data, start, c.binding, c.depths[ki], opt);
            break;
          case EstimatorMethod::TwoStep: {
            EstimatorOptions po = opt;
            po.compute_se = false;
            const EstimateResult p = maximize_pseudo_lik(data, start, c.binding, c.depths[ki], po);
            if (!p.converged) throw NumericalError("pilot did not converge");
            r = solve_two_step(data, start, c.binding, c.depths[ki], p, opt);
            break;
          }
          case EstimatorMethod::MomentPilot:
            r = moment_pilot(data, start, c.binding, opt);
            break;
        }
        slot[ki].theta = r.theta;
        slot[ki].se = r.se;
        slot[ki].iterations = r.iterations;
        slot[ki].ok = r.converged;
        slot[ki].message = r.message;
      } catch (const std::exception& e) {
        slot[ki].message = e.what();
      }
    }
  });

  res.summary = summarize(c, res.cells, res.raw);
  return res;
}

std::vector<CellSummary> summarize(const StudyConfig& c, const std::vector<StudyCell>& cells,
                                   const std::vector<ReplicateEstimate>& raw) {
  const auto names = c.binding.names();
  const int p = static_cast<int>(names.size());
  int ia = -1, ib = -1;
  for (int i = 0; i < p; ++i) {
    if (names[i] == "a") ia = i;
    if (names[i] == "b") ib = i;
  }
  std::vector<CellSummary> out;
  for (std::size_t cell = 0; cell < cells.size(); ++cell) {
    for (int k : c.depths) {
      std::vector<const ReplicateEstimate*> good;
      int total = 0, fails = 0;
      for (const auto& e : raw) {
        if (e.cell != static_cast<int>(cell) || e.k != k) continue;
        ++total;
        if (e.ok && e.theta.size() == p)
          good.push_back(&e);
        else
          ++fails;
      }
      const bool aborted = fails > 0.2 * total;
      const int R = static_cast<int>(good.size());
      std::vector<double> mean(p, 0.0), sd(p, kNaN);
      for (int i = 0; i < p; ++i) {
        for (const auto* e : good) mean[i] += e->theta(i);
        mean[i] /= R;
        if (R >= 2) {
          double ss = 0.0;
          for (const auto* e : good) ss += (e->theta(i) - mean[i]) * (e->theta(i) - mean[i]);
          sd[i] = std::sqrt(ss / (R - 1));
        }
      }
      std::optional<double> corr;
      if (ia >= 0 && ib >= 0 && R >= 2 && sd[ia] > 0 && sd[ib] > 0) {
        double sab = 0.0;
        for (const auto* e : good) sab += (e->theta(ia) - mean[ia]) * (e->theta(ib) - mean[ib]);
        corr = sab / (R - 1) / (sd[ia] * sd[ib]);
      }
      for (int i = 0; i < p; ++i) {
        CellSummary s;
        s.delta = cells[cell].delta;
        s.n = cells[cell].n;
        s.k = k;
        s.param = names[i];
        s.R = R;
        s.fails = fails;
        s.aborted = aborted;
        if (!aborted && R >= 1) {
          s.mean = mean[i];
          if (R >= 2) s.sd = sd[i];
          s.corr_ab = corr;
        }
        out.push_back(s);
      }
    }
  }
  return out;
}

void write_study_csv(const std::string& path, const StudyResult& result) {
  auto os = open_out(path);
  write_study_csv(os, result);
}

void write_study_csv(std::ostream& os, const StudyResult& result) {
  csv::write_row(os, {"delta", "n", "k", "param", "mean", "sd", "corr_ab", "fails", "R"});
  auto opt = [](const std::optional<double>& v) { return v ? csv::num(*v) : std::string(); };
  for (const auto& s : result.summary)
    csv::write_row(os, {csv::num(s.delta), std::to_string(s.n), std::to_string(s.k), s.param, opt(s.mean),
                        opt(s.sd), opt(s.corr_ab), std::to_string(s.fails), std::to_string(s.R)});
}

void write_raw_csv(const std::string& path, const StudyResult& result) {
  auto os = open_out(path);
  std::vector<std::string> head{"cell", "delta", "n", "k", "replicate", "seed", "ok", "iterations"};
  for (const auto& n : result.names) head.push_back(n);
  csv::write_row(os, head);
  for (const auto& e : result.raw) {
    const auto& cell = result.cells[e.cell];
    std::vector<std::string> row{std::to_string(e.cell), csv::num(cell.delta), std::to_string(cell.n),
                                 std::to_string(e.k), std::to_string(e.replicate), std::to_string(e.seed),
                                 e.ok ? "1" : "0", std::to_string(e.iterations)};
    for (std::size_t i = 0; i < result.names.size(); ++i)
      row.push_back(static_cast<Eigen::Index>(i) < e.theta.size() ? csv::num(e.theta(i)) : "");
    csv::write_row(os, row);
  }
}

// ---------------------------------------------------------------------------

LossConfig loss_config_from_json(const json& j) {
  LossConfig c;
  c.base = model_from_json(j.at("model"));
  c.binding = binding_from_json(j.value("free", json::array({"b"})));
  if (j.contains("grid")) {
    // Cartesian product over the listed fields, in key order.
    std::vector<std::vector<std::pair<std::string, double>>> pts{{}};
    for (const auto& [field, values] : j.at("grid").items()) {
      std::vector<std::vector<std::pair<std::string, double>>> next;
      for (const auto& pt : pts)
        for (double v : values.get<std::vector<double>>()) {
          auto q = pt;
          q.emplace_back(field, v);
          next.push_back(std::move(q));
        }
      pts = std::move(next);
    }
    c.points = std::move(pts);
  }
  if (j.contains("points")) {
    for (const auto& p : j.at("points")) {
      std::vector<std::pair<std::string, double>> pt;
      for (const auto& [field, v] : p.items()) pt.emplace_back(field, v.get<double>());
      c.points.push_back(std::move(pt));
    }
  }
  if (c.points.empty()) c.points.push_back({});
  c.deltas = j.value("deltas", c.deltas);
  c.depths = j.value("depths", c.depths);
  c.mc_replicates = j.value("mc_replicates", c.mc_replicates);
  c.mc.n = j.value("mc_n", c.mc.n);
  c.mc.h = j.value("mc_h", c.mc.h);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.out = j.value("out", c.out);
  return c;
}

std::vector<LossRow> run_loss(const LossConfig& c) {
  struct Item {
    DelayModelSpec model;
    double delta;
    int k;
  };
  std::vector<Item> items;
  for (const auto& pt : c.points) {
    DelayModelSpec m = c.base;
    for (const auto& [field, v] : pt) set_field(m, field, v);
    validate(m);
    c.binding.check(m);
    try {
      require_stationary(m);
    } catch (const NonStationaryError& e) {
      std::string where;
      for (const auto& [field, v] : pt) where += " " + field + "=" + csv::num(v);
      throw NonStationaryError("configuration" + where + " is outside the stationarity region: " + e.what());
    }
    for (double d : c.deltas)
      for (int k : c.depths) {
        if (k < 1) throw std::invalid_argument("depths must be >= 1");
        if (!(d > 0)) throw std::invalid_argument("deltas must be positive");
        items.push_back({m, d, k});
      }
  }
  const int p = c.binding.size();
  std::vector<LossRow> rows(items.size() * p);
  parallel_for(static_cast<int>(items.size()), c.threads, [&](int idx) {
    const Item& it = items[idx];
    const MomentMatrices mm = moment_matrices(it.model, c.binding, it.delta, it.k);
    const EfficiencyLoss L = efficiency_loss(mm.S, mm.M1, mm.M2);
    std::optional<EfficiencyLoss> Lmc;
    int nsim = 0;
    if (c.mc_replicates > 0) {
      MonteCarloOptions mo = c.mc;
      mo.threads = 1;
      const M2MonteCarlo mc =
          m2_montecarlo(it.model, mm.coeffs, it.delta, c.mc_replicates, derive_seed(c.seed, idx), mo);
      nsim = mc.nsim;
      try {
        Lmc = efficiency_loss(mm.S, mm.M1, mc.M2);
      } catch (const NumericalError&) {
      }
    }
    const auto names = c.binding.names();
    for (int i = 0; i < p; ++i) {
      LossRow& r = rows[static_cast<std::size_t>(idx) * p + i];
      r.model = it.model;
      r.delta = it.delta;
      r.k = it.k;
      r.param = names[i];
      r.loss = L.loss(i);
      r.avar_opt = L.avar_opt(i);
      r.avar_pseudo = L.avar_pseudo(i);
      r.J = mm.J;
      r.mc_nsim = nsim;
      r.mc_loss = Lmc ? Lmc->loss(i) : kNaN;
      r.mc_avar_opt = Lmc ? Lmc->avar_opt(i) : kNaN;
      r.mc_avar_pseudo = Lmc ? Lmc->avar_pseudo(i) : kNaN;
    }
  });
  return rows;
}

namespace {

std::vector<std::string> loss_prefix(const LossRow& r) {
  const double s = sigma_of(r.model);
  return {csv::num(field_or_nan(r.model, "a")), csv::num(field_or_nan(r.model, "b")),
          csv::num(field_or_nan(r.model, "r")), csv::num(s * s), csv::num(r.delta), std::to_string(r.k), r.param};
}

}  // namespace

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
  auto os = open_out(path);
  write_loss_csv(os, rows);
}

void write_loss_csv(std::ostream& os, const std::vector<LossRow>& rows) {
  csv::write_row(os, {"a", "b", "r", "sigma2", "delta", "k", "param", "loss", "avar_opt", "avar_pseudo",
                      "J_truncation"});
  for (const auto& r : rows) {
    auto row = loss_prefix(r);
    for (const auto& f : {csv::num(r.loss), csv::num(r.avar_opt), csv::num(r.avar_pseudo), std::to_string(r.J)})
      row.push_back(f);
    csv::write_row(os, row);
  }
}

void write_loss_mc_csv(const std::string& path, const std::vector<LossRow>& rows) {
  auto os = open_out(path);
  csv::write_row(os, {"a", "b", "r", "sigma2", "delta", "k", "param", "loss", "avar_opt", "avar_pseudo", "nsim"});
  for (const auto& r : rows) {
    auto row = loss_prefix(r);
    for (const auto& f : {csv::num(r.mc_loss), csv::num(r.mc_avar_opt), csv::num(r.mc_avar_pseudo),
                          std::to_string(r.mc_nsim)})
      row.push_back(f);
    csv::write_row(os, row);
  }
}

std::string sibling_path(const std::string& path, const std::string& suffix) {
  const std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

}  // namespace sdde
