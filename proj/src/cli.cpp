#include "sdde/cli.hpp"

#include "sdde/autocov.hpp"
#include "sdde/csv.hpp"
#include "sdde/errors.hpp"
#include "sdde/estimator.hpp"
#include "sdde/harness.hpp"
#include "sdde/simulator.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace sdde {

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string out;
  std::string config;
};

struct ModelFlags {
  std::string family;
  std::optional<double> a, b, r, sigma2;
  std::vector<double> alphas, delays;

  void add(CLI::App* cmd) {
    cmd->add_option("--family", family, "Model family: two_delay, multi_delay or exp_kernel");
    cmd->add_option("--a", a, "Drift coefficient a (two_delay: on X(t); exp_kernel: kernel rate)");
    cmd->add_option("--b", b, "Coefficient b (two_delay: on X(t-r); exp_kernel: kernel weight)");
    cmd->add_option("--r", r, "Delay r");
    cmd->add_option("--sigma2", sigma2, "Diffusion variance sigma^2");
    cmd->add_option("--alphas", alphas, "multi_delay coefficients")->delimiter(',');
    cmd->add_option("--delays", delays, "multi_delay delays, strictly increasing from 0")->delimiter(',');
  }
};

nlohmann::json read_json(const std::string& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("file not found: " + path);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("invalid JSON in " + path + ": " + e.what());
  }
}

// Default is the two-delay model with a = -1, b = -0.1353, r = 1, sigma^2 = 1.
DelayModelSpec build_model(const ModelFlags& f, const Globals& g) {
  nlohmann::json j = {{"family", "two_delay"}, {"a", -1.0}, {"b", -0.1353}, {"r", 1.0}, {"sigma2", 1.0}};
  if (!g.config.empty()) {
    const auto cfg = read_json(g.config);
    if (cfg.contains("model")) j = cfg.at("model");
  }
  if (!f.family.empty() && f.family != j.value("family", std::string("two_delay"))) {
    j = {{"family", f.family}};
  }
  if (f.a) j["a"] = *f.a;
  if (f.b) j["b"] = *f.b;
  if (f.r) j["r"] = *f.r;
  if (f.sigma2) {
    j.erase("sigma");
    j["sigma2"] = *f.sigma2;
  }
  if (!f.alphas.empty()) j["alphas"] = f.alphas;
  if (!f.delays.empty()) j["delays"] = f.delays;
  return model_from_json(j);
}

// Writes to --out when given, else to `out`.
template <class Fn>
void emit(const Globals& g, std::ostream& out, Fn&& fn) {
  if (g.out.empty()) {
    fn(out);
    return;
  }
  std::ofstream os(g.out);
  if (!os) throw std::runtime_error("cannot write " + g.out);
  fn(os);
}

ObservationSeries load_series(const std::string& path, std::optional<double> delta) {
  const csv::Table t = csv::read_file(path);
  int col = t.column("x");
  if (col < 0) col = t.column("value");
  if (col < 0) col = static_cast<int>(t.header.size()) - 1;
  const auto xs = t.numeric(col);
  ObservationSeries s;
  s.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  if (delta) {
    s.delta = *delta;
  } else {
    const int tc = t.column("t") >= 0 ? t.column("t") : t.column("time");
    if (tc < 0 || t.rows.size() < 2) throw std::invalid_argument("give --delta or a 't' column in the data");
    const auto ts = t.numeric(tc);
    s.delta = ts[1] - ts[0];
    for (std::size_t i = 1; i < ts.size(); ++i)
      if (std::abs(ts[i] - ts[i - 1] - s.delta) > 1e-9 * std::max(1.0, std::abs(ts[i])))
        throw std::invalid_argument("observation times are not equally spaced");
  }
  for (Eigen::Index i = 0; i < s.x.size(); ++i)
    if (!std::isfinite(s.x(i))) throw std::invalid_argument("data contains a missing or non-finite value");
  return s;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulation and estimation for affine stochastic delay differential equations", "sdde"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed (u64)");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", g.out, "Output CSV path (default: standard output)");
  app.add_option("--config", g.config, "JSON configuration file");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate a path or equidistant observations");
  ModelFlags sim_model;
  sim_model.add(sim);
  double sim_delta = 1.0, sim_h = 0.001, sim_warmup = -1;
  int sim_n = 200;
  bool sim_path = false;
  sim->add_option("--delta", sim_delta, "Observation spacing")->capture_default_str();
  sim->add_option("--n", sim_n, "Number of observations")->capture_default_str();
  sim->add_option("--step", sim_h, "Euler step h")->capture_default_str();
  sim->add_option("--warmup", sim_warmup, "Burn-in time (negative: automatic)")->capture_default_str();
  sim->add_flag("--path", sim_path, "Write the full path on [0, n delta] instead of observations");

  // autocov
  auto* ac = app.add_subcommand("autocov", "Autocovariance on a lag grid, with optional gradients");
  ModelFlags ac_model;
  ac_model.add(ac);
  double ac_delta = 1.0;
  int ac_lags = 10;
  std::vector<std::string> ac_free;
  ac->add_option("--delta", ac_delta, "Grid spacing")->capture_default_str();
  ac->add_option("--lags", ac_lags, "Largest lag index")->capture_default_str();
  ac->add_option("--free", ac_free, "Parameters to differentiate (e.g. a,b)")->delimiter(',');

  // estimate
  auto* est = app.add_subcommand("estimate", "Estimate parameters from an observation CSV");
  ModelFlags est_model;
  est_model.add(est);
  std::string est_data, est_method = "pseudo", est_init = "pilot";
  std::optional<double> est_delta;
  int est_k = 5;
  std::vector<std::string> est_free{"a", "b"};
  est->add_option("--data", est_data, "Observation CSV (column x, optional t)")->required();
  est->add_option("--delta", est_delta, "Observation spacing (default: from the t column)");
  est->add_option("--k", est_k, "Prediction depth")->capture_default_str();
  est->add_option("--method", est_method, "pseudo, optimal, two-step or pilot")
      ->check(CLI::IsMember({"pseudo", "optimal", "two-step", "pilot"}))
      ->capture_default_str();
  est->add_option("--free", est_free, "Free parameters")->delimiter(',')->capture_default_str();
  est->add_option("--init", est_init, "Starting point: pilot (moment match) or model (the model flags)")
      ->check(CLI::IsMember({"pilot", "model"}))
      ->capture_default_str();

  auto* study = app.add_subcommand("study", "Monte Carlo study from --config; raw estimates go to <out>.raw.csv");
  auto* loss = app.add_subcommand("loss", "Efficiency-loss table from --config; Monte Carlo route to <out>.mc.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) {
      SimConfig cfg;
      cfg.model = build_model(sim_model, g);
      cfg.h = sim_h;
      cfg.warmup = sim_warmup;
      cfg.seed = g.seed.value_or(1);
      if (sim_path) {
        cfg.horizon = sim_n * sim_delta;
        const SamplePath p = simulate_path(cfg);
        emit(g, out, [&](std::ostream& os) {
          csv::write_row(os, {"index", "time", "value"});
          for (Eigen::Index i = 0; i < p.x.size(); ++i)
            csv::write_row(os, {std::to_string(i), csv::num(i * p.h), csv::num(p.x(i))});
        });
      } else {
        const ObservationSeries s = simulate_observations(cfg, sim_delta, sim_n);
        emit(g, out, [&](std::ostream& os) {
          csv::write_row(os, {"i", "t", "x"});
          for (int i = 0; i < s.n(); ++i)
            csv::write_row(os, {std::to_string(i + 1), csv::num((i + 1) * s.delta), csv::num(s.x(i))});
        });
      }
    } else if (*ac) {
      const DelayModelSpec m = build_model(ac_model, g);
      if (ac_lags < 0) throw std::invalid_argument("--lags must be >= 0");
      const AutocovGrid grid = ac_free.empty()
                                   ? autocov_grid(m, ac_delta, ac_lags)
                                   : autocov_grid(m, ParameterBinding::free_fields(ac_free), ac_delta, ac_lags);
      emit(g, out, [&](std::ostream& os) {
        std::vector<std::string> head{"lag", "t", "K"};
        for (const auto& pn : ac_free) head.push_back("dK_d" + pn);
        csv::write_row(os, head);
        for (int j = 0; j <= grid.m(); ++j) {
          std::vector<std::string> row{std::to_string(j), csv::num(j * ac_delta), csv::num(grid.at(j))};
          for (std::size_t i = 0; i < ac_free.size(); ++i) row.push_back(csv::num(grid.grads(i, j)));
          csv::write_row(os, row);
        }
      });
    } else if (*est) {
      const ObservationSeries data = load_series(est_data, est_delta);
      DelayModelSpec m = build_model(est_model, g);
      const ParameterBinding binding = ParameterBinding::free_fields(est_free);
      binding.check(m);
      EstimatorOptions opt;
      const std::uint64_t seed = g.seed.value_or(opt.restart_seed);
      opt.restart_seed = seed;
      EstimateResult pilot;
      if (est_init == "pilot" || est_method == "pilot") {
        pilot = moment_pilot(data, m, binding, opt);
        if (est_init == "pilot" && feasible(m, binding, pilot.theta, 1e-3)) m = binding.apply(m, pilot.theta);
      }
      EstimateResult r;
      if (est_method == "pseudo") {
        r = maximize_pseudo_lik(data, m, binding, est_k, opt);
      } else if (est_method == "optimal") {
        r = solve_optimal(data, m, binding, est_k, opt);
      } else if (est_method == "two-step") {
        EstimatorOptions po = opt;
        po.compute_se = false;
        const EstimateResult p = maximize_pseudo_lik(data, m, binding, est_k, po);
        r = solve_two_step(data, m, binding, est_k, p, opt);
      } else {
        r = pilot;
      }
      emit(g, out, [&](std::ostream& os) {
        csv::write_row(os, {"param", "estimate", "stderr", "converged", "iterations", "method", "k", "delta", "n",
                            "seed"});
        for (int i = 0; i < r.theta.size(); ++i) {
          const double se = i < r.se.size() ? r.se(i) : std::numeric_limits<double>::quiet_NaN();
          csv::write_row(os, {r.names[i], csv::num(r.theta(i)), csv::num(se), r.converged ? "1" : "0",
                              std::to_string(r.iterations), method_name(r.method), std::to_string(r.k),
                              csv::num(data.delta), std::to_string(data.n()), std::to_string(seed)});
        }
      });
      if (!r.converged) err << "warning: estimator did not converge: " << r.message << "\n";
    } else if (*study) {
      if (g.config.empty()) throw std::invalid_argument("study needs --config");
      StudyConfig c = study_config_from_json(read_json(g.config));
      if (g.seed) c.seed = *g.seed;
      if (app.count("--threads")) c.threads = g.threads;
      if (!g.out.empty()) c.out = g.out;
      if (c.out.empty()) throw std::invalid_argument("study needs --out or an 'out' entry in the config");
      const StudyResult res = run_study(c);
      write_study_csv(c.out, res);
      write_raw_csv(sibling_path(c.out, ".raw"), res);
      for (const auto& s : res.summary)
        if (s.aborted)
          err << "warning: cell delta=" << s.delta << " n=" << s.n << " k=" << s.k << " aborted after " << s.fails
              << " failures\n";
    } else if (*loss) {
      if (g.config.empty()) throw std::invalid_argument("loss needs --config");
      LossConfig c = loss_config_from_json(read_json(g.config));
      if (g.seed) c.seed = *g.seed;
      if (app.count("--threads")) c.threads = g.threads;
      if (!g.out.empty()) c.out = g.out;
      const auto rows = run_loss(c);
      if (c.out.empty()) {
        write_loss_csv(out, rows);
      } else {
        write_loss_csv(c.out, rows);
        if (c.mc_replicates > 0) write_loss_mc_csv(sibling_path(c.out, ".mc"), rows);
      }
    }
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace sdde
