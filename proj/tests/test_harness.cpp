#include "oracles.hpp"

#include "sdde/cli.hpp"
#include "sdde/csv.hpp"
#include "sdde/errors.hpp"
#include "sdde/harness.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sdde;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sdde_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sdde");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int exit_status_of(const std::string& command) {
  const int raw = std::system(command.c_str());
#ifdef WEXITSTATUS
  return WEXITSTATUS(raw);
#else
  return raw;
#endif
}

json small_study(int R) {
  return json{{"model", {{"family", "two_delay"}, {"a", -1}, {"b", -0.1353}, {"r", 1}, {"sigma2", 1}}},
              {"free", {"a", "b"}},
              {"cells", {{{"delta", 1.0}, {"n", 60}}, {{"delta", 0.5}, {"n", 120}}}},
              {"depths", {1, 3}},
              {"replications", R},
              {"h", 0.01},
              {"seed", 9}};
}

}  // namespace

TEST(Harness, ModelJsonRoundTrip) {
  for (const DelayModelSpec& m : std::vector<DelayModelSpec>{
           TwoDelay{-1, 0.3, 2, 1.5}, MultiDelay{{-1, 0.2}, {0, 0.7}, 0.5},
           ExpKernel{1, 2, std::numeric_limits<double>::infinity(), 1}}) {
    const auto back = model_from_json(model_to_json(m));
    EXPECT_EQ(model_to_json(back), model_to_json(m));
  }
  const auto m = model_from_json(json{{"family", "exp_kernel"}, {"a", 1}, {"b", 1}, {"r", "inf"}, {"sigma", 2}});
  EXPECT_TRUE(std::isinf(std::get<ExpKernel>(m).r));
  EXPECT_DOUBLE_EQ(std::get<ExpKernel>(m).sigma, 2.0);
  EXPECT_THROW(model_from_json(json{{"family", "bogus"}}), std::invalid_argument);
}

TEST(Harness, BindingFromJson) {
  const auto b = binding_from_json(json::array({"a", json{{"path", "b"}, {"lower", -2}, {"upper", 1}}}));
  EXPECT_EQ(b.size(), 2);
  EXPECT_EQ(b.free_slot(1).lower, -2);
  EXPECT_EQ(b.free_slot(1).upper, 1);
}

TEST(Harness, StudyConfigValidation) {
  auto j = small_study(2);
  EXPECT_NO_THROW(check_study_config(study_config_from_json(j)));

  auto bad = j;
  bad["h"] = 0.3;
  EXPECT_THROW(check_study_config(study_config_from_json(bad)), std::invalid_argument);
  bad = j;
  bad["depths"] = {0};
  EXPECT_THROW(check_study_config(study_config_from_json(bad)), std::invalid_argument);
  bad = j;
  bad["replications"] = 0;
  EXPECT_THROW(check_study_config(study_config_from_json(bad)), std::invalid_argument);
  bad = j;
  bad["model"]["b"] = -3;
  EXPECT_THROW(check_study_config(study_config_from_json(bad)), NonStationaryError);
  bad = j;
  bad["method"] = "magic";
  EXPECT_THROW(study_config_from_json(bad), std::invalid_argument);
  bad = j;
  bad.erase("cells");
  bad["deltas"] = {1.0};
  EXPECT_THROW(study_config_from_json(bad), std::invalid_argument);
  bad["product"] = 50;
  const auto c = study_config_from_json(bad);
  ASSERT_EQ(c.cells.size(), 1u);
  EXPECT_EQ(c.cells[0].n, 50);
  bad["deltas"] = {0.3};
  EXPECT_THROW(study_config_from_json(bad), std::invalid_argument);
}

TEST(Harness, SingleReplicationHasNoSpread) {
  auto cfg = study_config_from_json(small_study(1));
  cfg.threads = 1;
  const auto res = run_study(cfg);
  ASSERT_EQ(res.summary.size(), 2u * 2u * 2u);
  for (const auto& s : res.summary) {
    if (s.R == 1) {
      EXPECT_TRUE(s.mean.has_value());
      EXPECT_FALSE(s.sd.has_value());
      EXPECT_FALSE(s.corr_ab.has_value());
    }
  }
  std::ostringstream os;
  write_study_csv(os, res);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "delta,n,k,param,mean,sd,corr_ab,fails,R");
}

TEST(Harness, ResultsIndependentOfThreadCount) {
  auto cfg = study_config_from_json(small_study(6));
  cfg.threads = 1;
  std::ostringstream one, many;
  write_study_csv(one, run_study(cfg));
  cfg.threads = 4;
  write_study_csv(many, run_study(cfg));
  EXPECT_EQ(one.str(), many.str());
}

TEST(Harness, RawEstimatesReproduceSummary) {
  auto cfg = study_config_from_json(small_study(8));
  const auto res = run_study(cfg);
  const auto raw_path = scratch("roundtrip.raw.csv");
  write_raw_csv(raw_path.string(), res);
  const auto table = csv::read_file(raw_path.string());
  const int ci = table.column("cell"), ki = table.column("k"), ri = table.column("replicate"),
            oi = table.column("ok"), ai = table.column("a"), bi = table.column("b");
  ASSERT_TRUE(ci >= 0 && ki >= 0 && ri >= 0 && oi >= 0 && ai >= 0 && bi >= 0);
  std::vector<ReplicateEstimate> raw;
  for (const auto& row : table.rows) {
    ReplicateEstimate e;
    e.cell = std::stoi(row[ci]);
    e.k = std::stoi(row[ki]);
    e.replicate = std::stoi(row[ri]);
    e.ok = row[oi] == "1";
    if (e.ok) e.theta = Eigen::Vector2d(std::stod(row[ai]), std::stod(row[bi]));
    raw.push_back(e);
  }
  const auto again = summarize(cfg, res.cells, raw);
  ASSERT_EQ(again.size(), res.summary.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    EXPECT_EQ(again[i].R, res.summary[i].R);
    EXPECT_EQ(again[i].mean, res.summary[i].mean);
    EXPECT_EQ(again[i].sd, res.summary[i].sd);
    EXPECT_EQ(again[i].corr_ab, res.summary[i].corr_ab);
  }
}

TEST(Harness, SummaryStatisticsAreSampleMoments) {
  auto cfg = study_config_from_json(small_study(5));
  const auto res = run_study(cfg);
  for (const auto& s : res.summary) {
    if (s.param != "a" || s.delta != 1.0 || s.k != 1) continue;
    std::vector<double> v;
    for (const auto& e : res.raw)
      if (e.cell == 0 && e.k == 1 && e.ok) v.push_back(e.theta(0));
    ASSERT_EQ(static_cast<int>(v.size()), s.R);
    EXPECT_NEAR(*s.mean, oracle::mean(v), 1e-14);
    if (s.R > 1) EXPECT_NEAR(*s.sd, oracle::sd(v), 1e-14);
  }
}

TEST(Harness, LossConfigAndTable) {
  const json j{{"model", {{"family", "two_delay"}, {"a", -1}, {"b", 0}, {"r", 1}, {"sigma2", 1}}},
               {"free", {"b"}},
               {"grid", {{"b", {-0.6, -0.1353}}}},
               {"deltas", {1.0}},
               {"depths", {1}}};
  const auto rows = run_loss(loss_config_from_json(j));
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GE(r.loss, 0.0);
    EXPECT_LT(r.loss, 1.0);
    EXPECT_TRUE(std::isnan(r.mc_loss));
  }
  EXPECT_GT(rows[0].loss, rows[1].loss);
  std::ostringstream os;
  write_loss_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "a,b,r,sigma2,delta,k,param,loss,avar_opt,avar_pseudo,J_truncation");

  json bad = j;
  bad["grid"] = {{"b", {-3.0}}};
  EXPECT_THROW(run_loss(loss_config_from_json(bad)), NonStationaryError);
  EXPECT_EQ(sibling_path("x/out.csv", ".mc"), "x/out.mc.csv");
}

TEST(Cli, StudyWritesTables) {
  auto j = small_study(2);
  const auto out = scratch("cli_study.csv");
  j["out"] = out.string();
  const auto cfg = scratch("cli_study.json");
  write_text(cfg, j.dump());
  fs::remove(out);
  const auto r = cli({"study", "--config", cfg.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out));
  EXPECT_TRUE(fs::exists(sibling_path(out.string(), ".raw")));
  EXPECT_EQ(csv::read_file(out.string()).rows.size(), 8u);
}

TEST(Cli, ExitCodes) {
  auto r = cli({"estimate", "--data", scratch("does_not_exist.csv").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("file not found"), std::string::npos) << r.err;

  const json loss{{"model", {{"family", "two_delay"}, {"a", -1}, {"b", 0}, {"r", 1}, {"sigma2", 1}}},
                  {"free", {"b"}},
                  {"grid", {{"b", {-2.5}}}}};
  const auto cfg = scratch("cli_loss_bad.json");
  write_text(cfg, loss.dump());
  r = cli({"loss", "--config", cfg.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("stationarity"), std::string::npos) << r.err;

  EXPECT_EQ(cli({"simulate", "--bogus-flag"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({}).code, 1);
}

TEST(Cli, SimulateThenEstimate) {
  auto r = cli({"--seed", "5", "simulate", "--delta", "1", "--n", "300", "--step", "0.01"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "i,t,x");
  const auto data = scratch("cli_series.csv");
  write_text(data, r.out);
  r = cli({"estimate", "--data", data.string(), "--k", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  const auto t = csv::parse(is);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][t.column("param")], "a");
  EXPECT_EQ(t.rows[0][t.column("converged")], "1");
  EXPECT_EQ(t.rows[0][t.column("delta")], "1");
}

TEST(Cli, AutocovTable) {
  const auto r = cli({"autocov", "--delta", "0.5", "--lags", "4", "--free", "a,b"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  const auto t = csv::parse(is);
  EXPECT_EQ(t.header, (std::vector<std::string>{"lag", "t", "K", "dK_da", "dK_db"}));
  ASSERT_EQ(t.rows.size(), 5u);
  const auto g = autocov_grid(TwoDelay{-1, -0.1353, 1, 1}, 0.5, 4);
  const auto K = t.numeric(t.column("K"));
  for (int j = 0; j <= 4; ++j) EXPECT_NEAR(K[j], g.at(j), 1e-12);
}

TEST(Cli, ExecutableExitStatus) {
  const std::string exe = SDDE_CLI_PATH;
  EXPECT_EQ(exit_status_of(exe + " --help > /dev/null"), 0);
  EXPECT_EQ(exit_status_of(exe + " estimate --data /nonexistent/file.csv 2> /dev/null"), 1);
  EXPECT_EQ(exit_status_of(exe + " frobnicate 2> /dev/null"), 1);
}
