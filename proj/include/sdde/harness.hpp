#pragma once

#include "sdde/estimator.hpp"
#include "sdde/model.hpp"
#include "sdde/pbef.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sdde {

// Model JSON: {"family": "two_delay", "a": .., "b": .., "r": .., "sigma2": ..},
// {"family": "multi_delay", "alphas": [..], "delays": [..], "sigma2": ..} or
// {"family": "exp_kernel", "a": .., "b": .., "r": .. | "inf", "sigma2": ..}.
DelayModelSpec model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const DelayModelSpec& model);

// Free parameters: a list of paths or of {"path", "lower", "upper"} objects.
ParameterBinding binding_from_json(const nlohmann::json& j);

struct StudyCell {
  double delta = 1.0;
  int n = 200;
};

struct StudyConfig {
  DelayModelSpec model = TwoDelay{};  // true parameter; its free fields are theta_0
  ParameterBinding binding;
  std::vector<StudyCell> cells;
  std::optional<double> product;  // when set, n = product / delta for every cell
  std::vector<int> depths{1};
  int replications = 200;
  double h = 0.001;
  double warmup = -1;  // < 0: automatic
  std::uint64_t seed = 1;
  EstimatorMethod method = EstimatorMethod::PseudoML;
  bool pilot_init = true;  // start from the moment pilot, else from theta_0
  bool compute_se = false;
  int threads = 0;
  std::string out;
};

StudyConfig study_config_from_json(const nlohmann::json& j);
// Throws std::invalid_argument on an inconsistent configuration and
// NonStationaryError when the true model is not stationary.
void check_study_config(const StudyConfig& config);

struct ReplicateEstimate {
  int cell = 0;
  int k = 0;
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;  // estimator finished and converged
  Eigen::VectorXd theta;
  Eigen::VectorXd se;
  int iterations = 0;
  std::string message;
};

struct CellSummary {
  double delta = 0.0;
  int n = 0;
  int k = 0;
  std::string param;
  int R = 0;      // replications entering the statistics
  int fails = 0;  // estimation failures or non-convergence
  bool aborted = false;
  std::optional<double> mean, sd, corr_ab;
};

struct StudyResult {
  std::vector<std::string> names;
  std::vector<StudyCell> cells;
  std::vector<ReplicateEstimate> raw;  // ordered by (cell, replicate, k)
  std::vector<CellSummary> summary;
};

StudyResult run_study(const StudyConfig& config);
// Aggregates raw estimates; run_study uses this, and loading a result back
// recomputes it for the self-consistency check.
std::vector<CellSummary> summarize(const StudyConfig& config, const std::vector<StudyCell>& cells,
                                   const std::vector<ReplicateEstimate>& raw);

void write_study_csv(const std::string& path, const StudyResult& result);
void write_study_csv(std::ostream& os, const StudyResult& result);
void write_raw_csv(const std::string& path, const StudyResult& result);

// ---------------------------------------------------------------------------

struct LossConfig {
  DelayModelSpec base = TwoDelay{-1.0, 0.0, 1.0, 1.0};
  ParameterBinding binding;
  // Each point overrides fields of the base model.
  std::vector<std::vector<std::pair<std::string, double>>> points;
  std::vector<double> deltas{1.0};
  std::vector<int> depths{1};
  int mc_replicates = 0;  // 0 disables the Monte Carlo route
  MonteCarloOptions mc;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out;
};

LossConfig loss_config_from_json(const nlohmann::json& j);

struct LossRow {
  DelayModelSpec model;
  double delta = 0.0;
  int k = 0;
  std::string param;
  double loss = 0.0, avar_opt = 0.0, avar_pseudo = 0.0;
  int J = 0;
  // Monte Carlo route (NaN when disabled).
  double mc_loss, mc_avar_opt, mc_avar_pseudo;
  int mc_nsim = 0;
};

std::vector<LossRow> run_loss(const LossConfig& config);
void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows);
void write_loss_csv(std::ostream& os, const std::vector<LossRow>& rows);
// Monte Carlo route; written next to the main table as <stem>.mc.csv.
void write_loss_mc_csv(const std::string& path, const std::vector<LossRow>& rows);
std::string sibling_path(const std::string& path, const std::string& suffix);

}  // namespace sdde
