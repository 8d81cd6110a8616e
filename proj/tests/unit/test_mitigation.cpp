#include "oracles.hpp"
#include "proxyfair/metrics.hpp"
#include "proxyfair/mitigation.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace proxyfair;

namespace {

MitigationConfig small_config(std::uint64_t seed = 3) {
  MitigationConfig c;
  c.hidden = 16;
  c.train = {10, 64, 1e-2, seed};
  return c;
}

TrainSet toy(Index n, std::uint64_t seed) {
  TrainSet t;
  t.X = oracle::random_matrix(n, 4, seed);
  t.y.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) t.y[static_cast<std::size_t>(i)] = t.X(i, 0) + 0.5 * t.X(i, 1) > 0.0 ? 1 : 0;
  return t;
}

void expect_same_parameters(ClassifierModel& a, ClassifierModel& b, double tol) {
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_LE((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff(), tol) << "parameter " << i;
}

double accuracy(const ClassifierModel& m, const TrainSet& t) {
  const Labels hard = hard_labels(predict(m, t.X));
  double hit = 0.0;
  for (std::size_t i = 0; i < hard.size(); ++i) hit += hard[i] == t.y[i];
  return hit / static_cast<double>(hard.size());
}

struct SyntheticSplit {
  EncodedTable table;
  SplitIndex parts;
  TrainSet train;
  Labels groups;
};

SyntheticSplit synthetic(std::uint64_t seed) {
  SyntheticSplit s;
  s.table = make_synthetic(3000, 1.0, seed);
  s.parts = split(s.table, 0.3, seed);
  s.train = make_train_set(s.table, s.parts.train);
  for (auto r : s.parts.train) s.groups.push_back(s.table.S[r]);
  return s;
}

double test_spd(const ClassifierModel& m, const SyntheticSplit& s) {
  const EncodedTable test = take_rows(s.table, s.parts.test);
  return evaluate(m, test.X, test.Y, test.S).spd;
}

}  // namespace

TEST(Erm, SeparableToyIsFit) {
  const TrainSet t = toy(600, 1);
  auto c = small_config();
  c.train.epochs = 40;
  const auto m = train_erm(t, c);
  EXPECT_GE(accuracy(m, t), 0.99);
  EXPECT_LT(m.loss_curve.back(), m.loss_curve.front());
}

TEST(Erm, SameSeedIsBitIdentical) {
  const TrainSet t = toy(300, 2);
  auto a = train_erm(t, small_config()), b = train_erm(t, small_config());
  expect_same_parameters(a, b, 0.0);
}

TEST(Erm, DivergenceIsReported) {
  TrainSet t = toy(100, 3);
  t.X(5, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_erm(t, small_config()), DivergenceError);
}

TEST(Adversarial, ZeroAlphaEqualsErm) {
  const TrainSet t = toy(400, 4);
  const Labels g = oracle::random_labels(400, 5);
  auto c = small_config();
  auto erm = train_erm(t, c);
  c.alpha = 0.0;
  auto adv = train_adversarial(t, g, c);
  expect_same_parameters(erm, adv, 1e-9);
}

TEST(Adversarial, LossGradientsMatchFiniteDifferences) {
  for (bool with_target : {false, true}) {
    Rng rng(11);
    MlpClassifier net(4, 6, rng);
    Adversary adv(with_target, rng);
    const Matrix x = oracle::random_matrix(12, 4, 12);
    const Labels y = oracle::random_labels(12, 13), s = oracle::random_labels(12, 14);

    nn::ParameterList predictor;
    net.collect(predictor);
    auto pred_loss = [&] { return adversarial_loss_and_grad(net, adv, x, y, s, 0.7).predictor_loss; };
    auto pred_step = [&] {
      nn::zero_grads(predictor);
      return pred_loss();
    };
    EXPECT_LT(oracle::finite_difference_error(predictor, pred_step, pred_loss), 1e-5);

    nn::ParameterList head;
    adv.collect(head);
    auto adv_loss = [&] { return adversarial_loss_and_grad(net, adv, x, y, s, 0.7).adversary_loss; };
    auto adv_step = [&] {
      nn::zero_grads(head);
      return adv_loss();
    };
    EXPECT_LT(oracle::finite_difference_error(head, adv_step, adv_loss), 1e-6);
  }
}

TEST(Adversarial, LowersSpdOnSyntheticData) {
  double erm = 0.0, adv = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = synthetic(seed);
    MitigationConfig c;
    c.train.seed = seed;
    c.train.batch_size = 64;
    erm += test_spd(train_erm(s.train, c), s);
    c.algorithm = Algorithm::advdeb;
    adv += test_spd(train_adversarial(s.train, s.groups, c), s);
  }
  EXPECT_LT(adv, erm);
}

TEST(Adversarial, GroupLabelsAreChecked) {
  const TrainSet t = toy(10, 1);
  EXPECT_THROW(train_adversarial(t, Labels(9, 0), small_config()), ShapeError);
  EXPECT_THROW(train_adversarial(t, Labels(10, 2), small_config()), Error);
}

TEST(FairMixup, ZeroLambdaEqualsErmOnSameStream) {
  const TrainSet t = toy(400, 6);
  const Labels g = oracle::random_labels(400, 7);
  auto c = small_config();
  c.lambda = 0.0;
  c.algorithm = Algorithm::fairmixup;
  for (auto target : {FairnessTarget::dp, FairnessTarget::eo}) {
    c.target = target;
    const BatchStream stream = mixup_stream(t, g, c);
    auto fm = train_fair_mixup(t, g, c, &stream);
    auto erm = train_erm(t, c, &stream);
    expect_same_parameters(fm, erm, 1e-9);
  }
}

TEST(FairMixup, InterpolationEndpoints) {
  const Matrix x0 = oracle::random_matrix(5, 3, 1), x1 = oracle::random_matrix(5, 3, 2);
  EXPECT_EQ(mix(x0, x1, 0.0), x1);
  EXPECT_EQ(mix(x0, x1, 1.0), x0);
  EXPECT_LT((mix(x0, x1, 0.25) - (0.25 * x0 + 0.75 * x1)).norm(), 1e-15);
  EXPECT_THROW(mix(x0, x1.topRows(4), 0.5), ShapeError);
}

TEST(FairMixup, StreamPairsGroupsWithinTargetClass) {
  const TrainSet t = toy(500, 8);
  const Labels g = oracle::random_labels(500, 9);
  auto c = small_config();
  c.algorithm = Algorithm::fairmixup;
  c.target = FairnessTarget::eo;
  for (const auto& epoch : mixup_stream(t, g, c))
    for (const auto& step : epoch) {
      ASSERT_EQ(step.first.size(), step.second.size());
      ASSERT_EQ(step.pair_sizes.size(), 2u);
      EXPECT_GE(step.t, 0.0);
      EXPECT_LT(step.t, 1.0);
      std::size_t at = 0;
      for (int block = 0; block < 2; ++block)
        for (std::size_t i = 0; i < step.pair_sizes[static_cast<std::size_t>(block)]; ++i, ++at) {
          EXPECT_EQ(g[step.first[at]], 0);
          EXPECT_EQ(g[step.second[at]], 1);
          EXPECT_EQ(t.y[step.first[at]], block);
          EXPECT_EQ(t.y[step.second[at]], block);
        }
    }
}

TEST(FairMixup, AbsentGroupIsAnError) {
  const TrainSet t = toy(50, 1);
  auto c = small_config();
  c.algorithm = Algorithm::fairmixup;
  try {
    train_fair_mixup(t, Labels(50, 0), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("group 1 is absent"), std::string::npos);
  }
}

TEST(FairMixup, NegativeLambdaIsAnError) {
  auto c = small_config();
  c.lambda = -0.1;
  EXPECT_THROW(train_fair_mixup(toy(20, 1), oracle::random_labels(20, 1), c), Error);
  c.lambda = 0.5;
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(FairMixup, PenaltyGradientMatchesFiniteDifferences) {
  Rng rng(21);
  MlpClassifier net(5, 8, rng);
  const Matrix x0 = oracle::random_matrix(10, 5, 22), x1 = oracle::random_matrix(10, 5, 23);
  nn::ParameterList params;
  net.collect(params);
  for (auto blocks : {std::vector<std::size_t>{10}, std::vector<std::size_t>{4, 6}}) {
    auto loss = [&] { return mixup_penalty(net, x0, x1, 0.3, blocks); };
    auto step = [&] {
      nn::zero_grads(params);
      mixup_penalty_grad(net, x0, x1, 0.3, blocks, 1.0);
      return loss();
    };
    EXPECT_LT(oracle::finite_difference_error(params, step, loss, 1e-6, 1e-7), 1e-4);
  }
}

TEST(FairMixup, PenaltyIsDirectionalDerivative) {
  Rng rng(31);
  MlpClassifier net(3, 5, rng);
  const Matrix x0 = oracle::random_matrix(6, 3, 32), x1 = oracle::random_matrix(6, 3, 33);
  const std::vector<std::size_t> blocks{6};
  const double t = 0.6, h = 1e-6;
  auto mean_pred = [&](double at) {
    const Vector z = net.logits(mix(x0, x1, at));
    return z.unaryExpr([](double v) { return nn::sigmoid(v); }).mean();
  };
  const double numeric = std::abs((mean_pred(t + h) - mean_pred(t - h)) / (2 * h));
  EXPECT_NEAR(mixup_penalty(net, x0, x1, t, blocks), numeric, 1e-7);
}

TEST(FairMixup, SpdFallsWithLambdaOnSyntheticData) {
  std::array<double, 3> total{};
  const std::array<double, 3> lambdas{0.0, 0.5, 2.0};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = synthetic(seed);
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      MitigationConfig c;
      c.algorithm = Algorithm::fairmixup;
      c.lambda = lambdas[i];
      c.train.seed = seed;
      total[i] += test_spd(train_fair_mixup(s.train, s.groups, c), s);
    }
  }
  EXPECT_LE(total[2], total[1]);
  EXPECT_LE(total[1], total[0]);
}

TEST(Predict, ZeroWeightsGiveOneHalf) {
  auto m = train_erm(toy(50, 1), small_config());
  for (auto* p : m.parameters()) p->value.setZero();
  for (double s : predict(m, oracle::random_matrix(20, 4, 3))) EXPECT_EQ(s, 0.5);
}

TEST(Predict, DuplicateRowsScoreIdentically) {
  const auto m = train_erm(toy(100, 1), small_config());
  Matrix x = oracle::random_matrix(10, 4, 5);
  x.row(7) = x.row(2);
  const auto s = predict(m, x);
  EXPECT_EQ(s[7], s[2]);
  for (double v : s) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Predict, WidthMismatchThrows) {
  const auto m = train_erm(toy(50, 1), small_config());
  EXPECT_THROW(predict(m, Matrix::Zero(3, 5)), ShapeError);
}

TEST(Predict, HardLabelThreshold) {
  const std::vector<double> s{0.2, 0.5, 0.7};
  EXPECT_EQ(hard_labels(s), (Labels{0, 1, 1}));
}

TEST(Checkpoint, ScoresSurviveReload) {
  const auto dir = std::filesystem::temp_directory_path() / "proxyfair_mitigation_test";
  std::filesystem::create_directories(dir);
  const TrainSet t = toy(200, 9);
  auto c = small_config();
  c.algorithm = Algorithm::advdeb;
  auto m = train_mitigated(t, oracle::random_labels(200, 3), c, "proxy");
  save_classifier(dir / "clf", m, Json{{"note", "kept"}});
  const auto back = load_classifier(dir / "clf");
  EXPECT_EQ(predict(back, t.X), predict(m, t.X));
  EXPECT_EQ(back.provenance, "proxy");
  EXPECT_EQ(back.config.algorithm, Algorithm::advdeb);
  std::filesystem::remove_all(dir);
}

TEST(Provenance, ErmRecordsNone) {
  const TrainSet t = toy(60, 1);
  EXPECT_EQ(train_mitigated(t, oracle::random_labels(60, 1), small_config(), "true").provenance, "none");
}
