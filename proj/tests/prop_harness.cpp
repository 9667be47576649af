#include "oracles.hpp"

#include "sdde/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sdde;
using nlohmann::json;

namespace {

json study(int R, json cells, json depths) {
  return json{{"model", {{"family", "two_delay"}, {"a", -1}, {"b", -0.1353}, {"r", 1}, {"sigma2", 1}}},
              {"free", {"a", "b"}},
              {"cells", cells},
              {"depths", depths},
              {"replications", R},
              {"h", 0.01},
              {"seed", 2718}};
}

const CellSummary& find(const StudyResult& r, double delta, int k, const std::string& p) {
  for (const auto& s : r.summary)
    if (s.delta == delta && s.k == k && s.param == p) return s;
  throw std::logic_error("cell not found");
}

}  // namespace

TEST(HarnessProperty, FineSamplingWithDepthOneIsFarNoisier) {
  const auto cfg = study_config_from_json(
      study(100, json::array({{{"delta", 0.05}, {"n", 4000}}, {{"delta", 1.0}, {"n", 200}}}), {1, 5}));
  const auto res = run_study(cfg);
  const auto& fine = find(res, 0.05, 1, "a");
  const auto& coarse = find(res, 1.0, 5, "a");
  ASSERT_TRUE(fine.sd && coarse.sd);
  EXPECT_GT(*fine.sd, 5 * *coarse.sd);
}

TEST(HarnessProperty, ReplicatesDoNotDependOnStudySize) {
  const auto cells = json::array({{{"delta", 1.0}, {"n", 80}}});
  const auto small = run_study(study_config_from_json(study(3, cells, {2})));
  const auto large = run_study(study_config_from_json(study(7, cells, {2})));
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(small.raw[r].seed, large.raw[r].seed);
    EXPECT_EQ(small.raw[r].theta, large.raw[r].theta);
  }
}

TEST(HarnessProperty, CoarseDepthFiveMeansNearTruth) {
  const auto res = run_study(study_config_from_json(study(100, json::array({{{"delta", 1.0}, {"n", 200}}}), {5})));
  const double truth[2] = {-1, -0.1353};
  const char* names[2] = {"a", "b"};
  for (int p = 0; p < 2; ++p) {
    const auto& s = find(res, 1.0, 5, names[p]);
    ASSERT_GE(s.R, 95);
    // Finite-sample bias of order 1/n is allowed on top of the MC error.
    EXPECT_LT(std::abs(*s.mean - truth[p]), 3 * *s.sd / std::sqrt(s.R) + 0.05) << names[p];
  }
}
