#include <random>

#include <gtest/gtest.h>

#include "odtk/logit_attrib.hpp"
#include "test_support.hpp"

using namespace odtk;

namespace {

AblationResult counts(std::map<std::size_t, std::size_t> c) {
  AblationResult r;
  r.prediction_counts = std::move(c);
  for (const auto &[t, k] : r.prediction_counts)
    for (std::size_t i = 0; i < k; ++i) r.predictions.push_back(t);
  r.distinct_predicted = r.prediction_counts.size();
  return r;
}

std::vector<std::size_t> tokens(const std::vector<TokenCount> &v) {
  std::vector<std::size_t> out;
  for (const auto &t : v) out.push_back(t.token);
  return out;
}

} // namespace

TEST(SplitLogit, WorkedExample) {
  const std::vector<float> a{1, 2, 3, 4}, u{4, 3, 2, 1};
  const auto s = split_logit<float>(a, u, IndexSet{1, 3});
  EXPECT_EQ(s.od_part, 2 * 3 + 4 * 1);
  EXPECT_EQ(s.nonod_part, 1 * 4 + 3 * 2);
  EXPECT_EQ(s.total, 20.0);
}

TEST(SplitLogit, EmptyAndFullSets) {
  const std::vector<double> a{0.5, -1.5, 2}, u{2, 2, -1};
  const auto none = split_logit<double>(a, u, {});
  EXPECT_EQ(none.od_part, 0.0);
  EXPECT_EQ(none.nonod_part, none.total);
  const auto all = split_logit<double>(a, u, IndexSet{0, 1, 2});
  EXPECT_EQ(all.nonod_part, 0.0);
  EXPECT_EQ(all.od_part, all.total);
}

TEST(SplitLogit, Errors) {
  const std::vector<float> a{1, 2}, b{1, 2, 3};
  EXPECT_THROW(split_logit<float>(a, b, {}), Error);
  EXPECT_THROW(split_logit<float>(a, a, IndexSet{2}), Error);
}

TEST(SplitLogit, PartsSumToLogitOnRandomPairs) {
  std::mt19937_64 gen(21);
  auto b = test::make_bundle(test::random_matrix(40, 64, gen, 3.0f), test::random_matrix(30, 64, gen));
  CounterRng rng(4);
  for (int c = 0; c < 100; ++c) {
    const std::size_t i = gen() % 40, t = gen() % 30;
    const auto od = sample_distinct(gen() % 65, 64, rng);
    const auto s = split_logit(b, i, t, od);
    double direct = 0;
    for (std::size_t j = 0; j < 64; ++j) direct += double(b.activations(i, j)) * b.unembedding(t, j);
    ASSERT_NEAR(s.od_part + s.nonod_part, direct, 1e-5);
    ASSERT_NEAR(s.total, s.od_part + s.nonod_part, 1e-6);
    EXPECT_EQ(s.context, i);
    EXPECT_EQ(s.token, t);
  }
}

TEST(SplitLogit, MatchesMaskedLogits) {
  std::mt19937_64 gen(2);
  auto b = test::make_bundle(test::random_matrix(10, 16, gen), test::random_matrix(7, 16, gen));
  const IndexSet od{0, 5, 9};
  const auto only = masked_logits(b.activations, b.unembedding, DimensionMask::only(od, 16));
  const auto abl = masked_logits(b.activations, b.unembedding, DimensionMask::ablate(od, 16));
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t t = 0; t < 7; ++t) {
      const auto s = split_logit(b, i, t, od);
      EXPECT_NEAR(s.od_part, only(i, t), 1e-9);
      EXPECT_NEAR(s.nonod_part, abl(i, t), 1e-9);
    }
}

TEST(MinCount, Default) {
  EXPECT_EQ(default_min_count(50000), 1000u);
  EXPECT_EQ(default_min_count(2000), 40u);
  EXPECT_EQ(default_min_count(10), 1u);
  EXPECT_EQ(default_min_count(0), 1u);
  EXPECT_EQ(default_min_count(10'000'000), 1000u);
}

TEST(Favored, ThresholdAndFullModelPresence) {
  const auto only = counts({{1, 1200}, {2, 1000}, {3, 999}, {4, 5000}});
  const auto full = counts({{1, 3}, {2, 1}, {3, 50}});
  const auto fav = find_od_favored(only, full, 1000);
  EXPECT_EQ(tokens(fav), (std::vector<std::size_t>{1, 2})); // 4 never predicted by the full model
  EXPECT_EQ(fav[0].count, 1200u);
  EXPECT_EQ(fav[0].full_count, 3u);
}

TEST(Favored, OrderIsCountThenToken) {
  const auto only = counts({{9, 10}, {3, 10}, {5, 20}});
  const auto full = counts({{9, 1}, {3, 1}, {5, 1}});
  EXPECT_EQ(tokens(find_od_favored(only, full, 1)), (std::vector<std::size_t>{5, 3, 9}));
}

TEST(Neutral, StrictEqualityPreferred) {
  const auto full = counts({{0, 100}, {1, 50}, {2, 20}, {3, 5}, {4, 30}});
  const auto abl = counts({{0, 100}, {1, 50}, {2, 19}, {3, 5}, {4, 31}});
  const auto sel = find_od_neutral(full, abl);
  EXPECT_FALSE(sel.used_ratio_fallback);
  EXPECT_EQ(tokens(sel.tokens), (std::vector<std::size_t>{0, 1})); // 3 is under min_full_count
}

TEST(Neutral, RatioFallbackWhenFewerThanTwo) {
  const auto full = counts({{0, 100}, {1, 50}, {2, 20}, {3, 40}});
  const auto abl = counts({{0, 100}, {1, 56}, {2, 18}, {3, 44}});
  const auto sel = find_od_neutral(full, abl);
  EXPECT_TRUE(sel.used_ratio_fallback);
  // ratios: 1.0, 1.12, 0.9, 1.1
  EXPECT_EQ(tokens(sel.tokens), (std::vector<std::size_t>{0, 3, 2}));
}

TEST(Neutral, CapKeepsHighestFullCounts) {
  std::map<std::size_t, std::size_t> c;
  for (std::size_t t = 0; t < 30; ++t) c[t] = 10 + t;
  const auto full = counts(c);
  NeutralOptions opt;
  opt.cap = 4;
  const auto sel = find_od_neutral(full, full, opt);
  EXPECT_EQ(tokens(sel.tokens), (std::vector<std::size_t>{29, 28, 27, 26}));
}

TEST(Neutral, ExcludedTokensSkipped) {
  const auto full = counts({{0, 100}, {1, 50}, {2, 20}});
  const auto sel = find_od_neutral(full, full, {}, IndexSet{1});
  EXPECT_EQ(tokens(sel.tokens), (std::vector<std::size_t>{0, 2}));
}

TEST(Neutral, EmptyBandRejected) {
  NeutralOptions opt;
  opt.ratio_lo = 1.2;
  opt.ratio_hi = 1.1;
  EXPECT_THROW(find_od_neutral(counts({{0, 1}}), counts({{0, 1}}), opt), Error);
}

TEST(Cohorts, NeutralDisjointFromFavored) {
  const auto full = counts({{0, 100}, {1, 100}, {2, 100}});
  const auto only = counts({{0, 300}});
  const auto c = make_cohorts(full, full, only, 10);
  EXPECT_EQ(tokens(c.od_favored), (std::vector<std::size_t>{0}));
  EXPECT_EQ(tokens(c.od_neutral), (std::vector<std::size_t>{1, 2}));
}

TEST(Contribution, PlantedDimensionDrivesFavoredToken) {
  // dim 0 is huge everywhere and aligned with token 0 only
  const std::size_t n = 6, d = 3, v = 3;
  auto a = test::from_rows({{10, 1, 0}, {10, 0, 1}, {10, 1, 0}, {10, 0, 1}, {10, 1, 1}, {10, 0, 0}});
  auto u = test::from_rows({{1, 0, 0}, {0, 20, 0}, {0, 0, 20}});
  auto b = test::make_bundle(a, u);
  const auto full = evaluate_condition(b, DimensionMask::full(d));
  const IndexSet od{0};
  const auto only = evaluate_condition(b, DimensionMask::only(od, d));
  const auto abl = evaluate_condition(b, DimensionMask::ablate(od, d));
  NeutralOptions nopt;
  nopt.min_full_count = 1;
  const auto c = make_cohorts(full, abl, only, 1, nopt);
  ASSERT_FALSE(c.od_favored.empty());
  EXPECT_EQ(c.od_favored[0].token, 0u);
  const auto rep = contribution_report(b, full, c, od);
  for (const auto &row : rep.rows) {
    const auto expect = split_logit(b, row.split.context, row.split.token, od);
    EXPECT_EQ(row.split.od_part, expect.od_part);
    EXPECT_EQ(row.split.nonod_part, expect.nonod_part);
  }
  for (const auto &nc : rep.neutral) {
    EXPECT_EQ(nc.self.od.mean, 0.0);
    ASSERT_EQ(nc.toward_favored.size(), rep.favored_tokens.size());
    if (!rep.favored_tokens.empty()) {
      EXPECT_EQ(nc.toward_favored[0].od.mean, 10.0);
    }
  }
  EXPECT_EQ(n, b.n());
  EXPECT_EQ(v, b.v());
}

TEST(Contribution, EmptyCohortsDegenerate) {
  std::mt19937_64 gen(1);
  auto b = test::make_bundle(test::random_matrix(4, 3, gen), test::random_matrix(3, 3, gen));
  const auto full = evaluate_condition(b, DimensionMask::full(3));
  try {
    contribution_report(b, full, TokenCohorts{}, {});
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
  }
}

TEST(Contribution, CsvLongFormat) {
  std::mt19937_64 gen(6);
  auto b = test::make_bundle(test::random_matrix(8, 4, gen), test::random_matrix(3, 4, gen));
  const auto full = evaluate_condition(b, DimensionMask::full(4));
  TokenCohorts c;
  c.od_favored.push_back({full.predictions[0], 1, 1});
  const auto rep = contribution_report(b, full, c, IndexSet{1});
  const auto rows = csv::parse(contribution_csv(rep, b));
  ASSERT_EQ(rows.rows.size(), 2 * rep.rows.size());
  EXPECT_EQ(rows.header, (std::vector<std::string>{"context", "token", "cohort", "part", "value"}));
  const auto j = to_json(rep, b.vocab);
  EXPECT_EQ(j["od_favored"].size(), 1u);
}
