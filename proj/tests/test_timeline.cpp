#include <gtest/gtest.h>

#include "odtk/timeline.hpp"
#include "test_support.hpp"

using namespace odtk;

namespace {

ModelBundle checkpoint(const std::vector<std::size_t> &planted, std::uint64_t seed, std::string step) {
  auto b = test::planted_bundle(120, 32, 20, planted, seed);
  b.manifest.checkpoint_step = std::move(step);
  return b;
}

} // namespace

TEST(OverPredicted, RatioOrderingAndThreshold) {
  SampleTable s;
  s.ground_truth = {0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 3};
  AblationResult full;
  full.prediction_counts = {{0, 6}, {1, 2}, {2, 3}, {3, 0}};
  const auto op = over_predicted_tokens(full, s, 3);
  ASSERT_EQ(op.size(), 3u); // token 3 occurs once in the ground truth
  EXPECT_EQ(op[0].token, 0u);
  EXPECT_DOUBLE_EQ(op[0].ratio, 2.0);
  EXPECT_EQ(op[1].token, 2u);
  EXPECT_EQ(op[2].token, 1u);
  EXPECT_EQ(op[2].truth_count, 4u);
  EXPECT_EQ(op[2].predicted_count, 2u);
}

TEST(OverPredicted, TiesBrokenByToken) {
  SampleTable s;
  s.ground_truth = {5, 5, 2, 2};
  AblationResult full;
  full.prediction_counts = {{5, 2}, {2, 2}};
  const auto op = over_predicted_tokens(full, s, 1);
  EXPECT_EQ(op[0].token, 2u);
  EXPECT_EQ(op[1].token, 5u);
}

TEST(Timeline, EmergingOutlierDimensions) {
  std::vector<ModelBundle> bundles{checkpoint({}, 1, "0"), checkpoint({7}, 2, "1000"),
                                   checkpoint({7, 19}, 3, "final")};
  TimelineConfig cfg;
  cfg.seeds = {1, 2, 3};
  cfg.min_truth_count = 1;
  const auto rows = run_timeline(bundles, cfg);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].step, "0");
  EXPECT_EQ(rows[1].od_indices, (IndexSet{7}));
  EXPECT_EQ(rows[1].intersection_with_final, 1u);
  EXPECT_EQ(rows[2].od_indices, (IndexSet{7, 19}));
  EXPECT_EQ(rows[2].intersection_with_final, 2u);
  for (const auto &r : rows) {
    EXPECT_LE(r.intersection_with_final, r.od_count);
    EXPECT_GE(r.accuracy_full, 0.0);
    EXPECT_LE(r.accuracy_full, 1.0);
    EXPECT_GE(r.distinct_full, 1u);
  }
  // recompute a row directly
  const auto od = detect_ods(bundles[1].activations);
  const auto full = evaluate_condition(bundles[1], DimensionMask::full(32));
  const auto abl = evaluate_condition(bundles[1], DimensionMask::ablate(od.od_indices, 32));
  EXPECT_EQ(rows[1].accuracy_full, full.accuracy);
  EXPECT_EQ(rows[1].accuracy_ablate, abl.accuracy);
  EXPECT_EQ(rows[1].distinct_ablate, abl.distinct_predicted);

  const auto table = csv::parse(timeline_csv(rows));
  EXPECT_EQ(table.rows.size(), 3u);
  EXPECT_EQ(table.rows[2][table.column("step")], "final");
  const auto j = to_json(rows, bundles.back().vocab);
  EXPECT_EQ(j.size(), 3u);
  EXPECT_EQ(j[2]["intersection_with_final"], 2);
}

TEST(Timeline, IdenticalBundlesIntersectFully) {
  std::vector<ModelBundle> bundles{checkpoint({4, 9}, 5, "a"), checkpoint({4, 9}, 5, "b")};
  TimelineConfig cfg;
  cfg.seeds = {1};
  const auto rows = run_timeline(bundles, cfg);
  for (const auto &r : rows) EXPECT_EQ(r.intersection_with_final, r.od_count);
  EXPECT_EQ(rows[0].accuracy_full, rows[1].accuracy_full);
}

TEST(Timeline, IncompatibleBundles) {
  std::vector<ModelBundle> bundles{checkpoint({1}, 1, "a"), test::planted_bundle(120, 16, 20, {1}, 2)};
  try {
    run_timeline(bundles);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::IncompatibleBundles);
  }
  std::vector<ModelBundle> one{checkpoint({1}, 1, "a")};
  EXPECT_THROW(run_timeline(one), Error);
}
