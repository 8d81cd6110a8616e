#include "oracles.hpp"
#include "proxyfair/metrics.hpp"

#include <gtest/gtest.h>

using namespace proxyfair;

namespace {

PredictionSet hard_set(Labels hard, Labels y, Labels s) {
  PredictionSet p;
  p.score.assign(hard.begin(), hard.end());
  p.hard = std::move(hard);
  p.y = std::move(y);
  p.s = std::move(s);
  return p;
}

PredictionSet random_set(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(n);
  // Coarse grid so tied scores occur.
  for (auto& v : scores) v = std::round(u(rng) * 20.0) / 20.0;
  Labels y = oracle::random_labels(n, seed + 1, 0.3), s = oracle::random_labels(n, seed + 2, 0.4);
  // Every group needs both target classes.
  for (int g = 0; g < 2; ++g)
    for (int c = 0; c < 2; ++c) {
      y[static_cast<std::size_t>(2 * g + c)] = c;
      s[static_cast<std::size_t>(2 * g + c)] = g;
    }
  return PredictionSet::from_scores(scores, y, s);
}

}  // namespace

TEST(Spd, SymmetricRatesGiveZero) { EXPECT_EQ(spd(hard_set({1, 0, 1, 0}, {1, 1, 1, 1}, {0, 0, 1, 1})), 0.0); }

TEST(Spd, HandComputedHalf) { EXPECT_EQ(spd(hard_set({1, 1, 1, 0}, {1, 0, 1, 0}, {0, 0, 1, 1})), 0.5); }

TEST(Spd, AllPositiveGivesZero) { EXPECT_EQ(spd(hard_set({1, 1, 1, 1}, {1, 0, 1, 0}, {0, 0, 1, 1})), 0.0); }

TEST(Spd, EmptyGroupNamesTheGroup) {
  try {
    spd(hard_set({1, 0}, {1, 0}, {0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("S=1"), std::string::npos);
  }
}

TEST(Eod, PerfectClassifierHasNoGaps) {
  const auto g = eod(hard_set({1, 0, 1, 0}, {1, 0, 1, 0}, {0, 0, 1, 1}));
  EXPECT_EQ(g.dfpr, 0.0);
  EXPECT_EQ(g.dfnr, 0.0);
  EXPECT_EQ(g.eod, 0.0);
}

TEST(Eod, HandComputedCase) {
  const auto g = eod(hard_set({1, 0, 1, 0, 1, 1}, {1, 1, 0, 0, 1, 0}, {0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(g.dfpr, 0.5);
  EXPECT_EQ(g.dfnr, 0.5);
  EXPECT_EQ(g.eod, 0.5);
}

TEST(Eod, IdenticalConfusionTables) {
  const auto g = eod(hard_set({1, 0, 1, 1, 0, 1}, {1, 1, 0, 1, 1, 0}, {0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(g.eod, 0.0);
}

TEST(Eod, MissingClassSaysWhichRate) {
  try {
    eod(hard_set({1, 0, 1, 0}, {1, 1, 1, 0}, {0, 0, 1, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("FPR"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("S=0"), std::string::npos);
  }
}

TEST(AveragePrecision, PerfectRanking) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  EXPECT_EQ(average_precision(s, Labels{1, 1, 0, 0}), 1.0);
}

TEST(AveragePrecision, HandComputedCase) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  EXPECT_NEAR(average_precision(s, Labels{1, 0, 1, 0}), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
}

TEST(AveragePrecision, ZeroPositivesThrows) {
  const std::vector<double> s{0.9, 0.8};
  EXPECT_THROW(average_precision(s, Labels{0, 0}), Error);
}

TEST(AveragePrecision, RandomScoresApproachBaseRate) {
  const std::size_t n = 10000;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u;
  std::vector<double> scores(n);
  for (auto& v : scores) v = u(rng);
  const Labels y = oracle::random_labels(n, 6, 0.3);
  EXPECT_NEAR(average_precision(scores, y), positive_rate(y), 0.02);
}

TEST(Evaluate, MatchesCountingOracle) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = random_set(seed, 50 + seed);
    const auto r = evaluate(p);
    const auto o = oracle::tally_metrics(p.hard, p.score, p.y, p.s);
    EXPECT_NEAR(r.spd, o.spd, 1e-12);
    EXPECT_NEAR(r.dfpr, o.dfpr, 1e-12);
    EXPECT_NEAR(r.dfnr, o.dfnr, 1e-12);
    EXPECT_NEAR(r.eod, o.eod, 1e-12);
    EXPECT_NEAR(r.ap, o.ap, 1e-12);
  }
}

TEST(Evaluate, EodIsMeanOfGaps) {
  const auto r = evaluate(random_set(3, 500));
  EXPECT_EQ(r.eod, (r.dfpr + r.dfnr) / 2.0);
}

TEST(Evaluate, SwappedGroupPolarityKeepsValues) {
  auto p = random_set(11, 400);
  const auto a = evaluate(p);
  for (auto& g : p.s) g = 1 - g;
  const auto b = evaluate(p);
  EXPECT_EQ(a.spd, b.spd);
  EXPECT_EQ(a.eod, b.eod);
  EXPECT_EQ(a.group_sizes[0], b.group_sizes[1]);
}

TEST(Evaluate, ReportJsonHasFields) {
  const Json j = evaluate(random_set(2, 100), "proxy").to_json();
  for (const char* k : {"ap", "spd", "dfpr", "dfnr", "eod", "group_sizes", "confusion", "provenance"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["provenance"], "proxy");
}

TEST(PredictionSet, ThresholdIsInclusive) {
  const auto p = PredictionSet::from_scores({0.5, 0.49, 0.51}, {1, 0, 1}, {0, 1, 1});
  EXPECT_EQ(p.hard, (Labels{1, 0, 1}));
}

TEST(PredictionSet, RejectsMisalignedInput) {
  PredictionSet p = hard_set({1, 0}, {1, 0}, {0, 1});
  p.y.pop_back();
  EXPECT_THROW(p.validate(), Error);
}

TEST(Summary, SampleStandardDeviation) {
  const std::vector<double> v{1.0, 2.0, 3.0};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.stddev, 1.0);
}

TEST(Tables, FirstTableLayout) {
  const std::vector<Table1Row> rows = {{"w/o Bias Mitigation", {{0.8, 0.01}, {0.2, 0.02}, {0.11, 0.0}, 5}},
                                       {"Fair Mixup", {}},
                                       {"Adversarial Debiasing", {}}};
  const std::string md = table1_markdown(rows);
  EXPECT_NE(md.find("| Bias Mitigation Algorithm | Average Precision | SPD | EOD |"), std::string::npos);
  EXPECT_NE(md.find("| w/o Bias Mitigation | 0.800 ± 0.010 | 0.200 ± 0.020 | 0.110 ± 0.000 |"), std::string::npos);
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 5);
}

TEST(Tables, SecondTableHasTwelveCells) {
  std::vector<Table2Entry> entries;
  for (const char* e : {"AutoEncoder", "Transformer"})
    for (const char* c : {"K-Means", "Hierarchical", "BIRCH"}) entries.push_back({e, c, {}, {}});
  const std::string md = table2_markdown(entries);
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 2 + 1 + 6);
  EXPECT_NE(md.find("FairMixup"), std::string::npos);
  EXPECT_NE(md.find("Adversarial Debiasing"), std::string::npos);
}
