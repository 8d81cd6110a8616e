#include "oracles.hpp"
#include "proxyfair/nncore.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace proxyfair;
using namespace proxyfair::nn;

TEST(Dense, IdentityMap) {
  const Dense d("d", Matrix::Identity(3, 3), RowVector::Zero(3));
  const Matrix x = oracle::random_matrix(4, 3, 1);
  EXPECT_EQ(dense_forward(d, x, Activation::identity), x);
}

TEST(Dense, ReluClamp) {
  const Dense d("d", Matrix::Ones(1, 2), RowVector::Zero(1));
  Matrix x(1, 2);
  x << -1, -2;
  EXPECT_EQ(dense_forward(d, x, Activation::relu)(0, 0), 0.0);
}

TEST(Dense, TanhHandComputed) {
  const Dense d("d", Matrix::Constant(1, 1, 2.0), RowVector::Constant(1, 1.0));
  EXPECT_NEAR(dense_forward(d, Matrix::Constant(1, 1, 0.5), Activation::tanh)(0, 0), 0.9640, 1e-4);
}

TEST(Dense, ShapeMismatchNamesDims) {
  const Dense d("enc", Matrix::Ones(2, 3), RowVector::Zero(2));
  try {
    d.affine(Matrix::Ones(1, 4));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("1x4"), std::string::npos) << e.what();
  }
}

TEST(Reconstruction, PerfectIsZero) {
  const Matrix x = oracle::random_matrix(3, 2, 1);
  EXPECT_EQ(loss_reconstruction(x, x, ReconMode::mse), 0.0);
  EXPECT_EQ(loss_reconstruction(x, x, ReconMode::mae), 0.0);
}

TEST(Reconstruction, HandComputed) {
  Matrix x(1, 2), z = Matrix::Zero(1, 2);
  x << 1, 2;
  EXPECT_DOUBLE_EQ(loss_reconstruction(x, z, ReconMode::mae), 1.5);
  EXPECT_DOUBLE_EQ(loss_reconstruction(x, z, ReconMode::mse), 2.5);
}

TEST(Reconstruction, ShapeMismatchThrows) {
  EXPECT_THROW(loss_reconstruction(Matrix::Zero(2, 2), Matrix::Zero(2, 3), ReconMode::mse), ShapeError);
}

TEST(CrossEntropy, CertainPredictionIsZero) {
  const Matrix p = Matrix::Identity(3, 3);
  const std::vector<std::uint8_t> mask{1, 1, 1};
  EXPECT_EQ(loss_cross_entropy(p, p, mask), 0.0);
}

TEST(CrossEntropy, SingleMaskedFieldLn2) {
  Matrix p(2, 2), y(2, 2);
  p << 0.5, 0.5, 0.1, 0.9;
  y << 1, 0, 1, 0;
  const std::vector<std::uint8_t> mask{1, 0};
  EXPECT_NEAR(loss_cross_entropy(p, y, mask), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, ZeroProbabilityIsClamped) {
  Matrix p(1, 2), y(1, 2);
  p << 0.0, 1.0;
  y << 1, 0;
  const std::vector<std::uint8_t> mask{1};
  EXPECT_TRUE(std::isfinite(loss_cross_entropy(p, y, mask)));
}

TEST(CrossEntropy, EmptyMaskWarnsAndReturnsZero) {
  int warnings = 0;
  set_warning_handler([&](const std::string&) { ++warnings; });
  const std::vector<std::uint8_t> mask{0, 0};
  EXPECT_EQ(loss_cross_entropy(Matrix::Constant(2, 2, 0.5), Matrix::Identity(2, 2), mask), 0.0);
  set_warning_handler(nullptr);
  EXPECT_EQ(warnings, 1);
}

TEST(Kl, IdenticalIsZero) {
  const Matrix p = Matrix::Constant(3, 2, 0.5);
  EXPECT_EQ(loss_kl(p, p), 0.0);
}

TEST(Kl, HandComputed) {
  Matrix p(1, 2), q(1, 2);
  p << 0.9, 0.1;
  q << 0.5, 0.5;
  EXPECT_NEAR(loss_kl(p, q), 0.9 * std::log(1.8) + 0.1 * std::log(0.2), 1e-12);
  EXPECT_NEAR(loss_kl(p, q), 0.3681, 1e-4);
}

TEST(Kl, NonNegativeOnRandomDistributions) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Matrix p = softmax_rows(oracle::random_matrix(4, 3, seed));
    const Matrix q = softmax_rows(oracle::random_matrix(4, 3, seed + 100));
    EXPECT_GE(loss_kl(p, q), 0.0);
  }
}

TEST(Adam, ZeroGradientLeavesValues) {
  Parameter p("p", oracle::random_matrix(2, 2, 1));
  const Matrix before = p.value;
  ParameterList list{&p};
  auto state = make_adam_state(list);
  adam_step(list, state);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Matrix::Zero(1, 3));
  p.grad << 0.3, -2.0, 50.0;
  ParameterList list{&p};
  auto state = make_adam_state(list, {0.01});
  adam_step(list, state);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(std::abs(p.value(0, i)), 0.01, 1e-6);
  EXPECT_LT(p.value(0, 0), 0.0);
  EXPECT_GT(p.value(0, 1), 0.0);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Parameter p("layer.weight", Matrix::Zero(1, 1));
  p.grad(0, 0) = std::nan("");
  ParameterList list{&p};
  auto state = make_adam_state(list);
  try {
    adam_step(list, state);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

namespace {

struct TinyNet {
  Dense l1, l2;
  Matrix x, y;
  TinyNet(std::uint64_t seed) {
    Rng rng(seed);
    l1 = Dense("l1", 3, 4, rng);
    l2 = Dense("l2", 4, 2, rng);
    x = oracle::random_matrix(5, 3, seed + 1);
    y = oracle::random_matrix(5, 2, seed + 2);
  }
  ParameterList params() {
    ParameterList p;
    l1.collect(p);
    l2.collect(p);
    return p;
  }
  double loss() const {
    return loss_reconstruction(y, l2.affine(l1.forward(x, Activation::tanh)), ReconMode::mse);
  }
  double loss_and_grad() {
    zero_grads(params());
    const Matrix z1 = l1.affine(x), a1 = activate(z1, Activation::tanh), out = l2.affine(a1);
    Matrix g;
    const double l = loss_reconstruction(y, out, ReconMode::mse, &g);
    // loss_reconstruction's gradient is w.r.t. its second argument.
    const Matrix ga = l2.backward(a1, g);
    l1.backward(x, activation_backward(z1, a1, ga, Activation::tanh));
    return l;
  }
  void step(Adam& opt) {
    opt.zero_grad();
    loss_and_grad();
    opt.step();
  }
};

}  // namespace

TEST(GradCheck, LinearModelIsExact) {
  Rng rng(3);
  Dense d("lin", 3, 2, rng);
  const Matrix x = oracle::random_matrix(6, 3, 4), y = oracle::random_matrix(6, 2, 5);
  ParameterList p;
  d.collect(p);
  auto lg = [&] {
    zero_grads(p);
    Matrix g;
    const double l = loss_reconstruction(y, d.affine(x), ReconMode::mse, &g);
    d.backward(x, g);
    return l;
  };
  auto l = [&] { return loss_reconstruction(y, d.affine(x), ReconMode::mse); };
  EXPECT_LT(grad_check(p, lg, l).max_rel_error, 1e-7);
  EXPECT_LT(oracle::finite_difference_error(p, lg, l), 1e-7);
}

TEST(GradCheck, TanhNetwork) {
  TinyNet net(7);
  auto p = net.params();
  auto lg = [&] { return net.loss_and_grad(); };
  auto l = [&] { return net.loss(); };
  EXPECT_LT(grad_check(p, lg, l).max_rel_error, 1e-4);
  EXPECT_LT(oracle::finite_difference_error(p, lg, l), 1e-4);
}

TEST(GradCheck, DetectsWrongGradient) {
  TinyNet net(8);
  auto p = net.params();
  auto lg = [&] {
    const double l = net.loss_and_grad();
    net.l1.weight.grad *= 1.5;
    return l;
  };
  EXPECT_GT(grad_check(p, lg, [&] { return net.loss(); }).max_rel_error, 1e-2);
}

TEST(LayerNorm, GradientMatchesFiniteDifference) {
  LayerNorm ln("ln", 5);
  Rng rng(2);
  std::normal_distribution<double> n01;
  for (Index i = 0; i < 5; ++i) {
    ln.gain.value(0, i) = 1.0 + 0.3 * n01(rng);
    ln.shift.value(0, i) = 0.3 * n01(rng);
  }
  Parameter input("x", oracle::random_matrix(4, 5, 9));
  const Matrix target = oracle::random_matrix(4, 5, 10);
  ParameterList p;
  ln.collect(p);
  p.push_back(&input);
  auto l = [&] { return loss_reconstruction(target, ln.forward(input.value, nullptr), ReconMode::mse); };
  auto lg = [&] {
    zero_grads(p);
    LayerNorm::Cache c;
    Matrix g;
    const double v = loss_reconstruction(target, ln.forward(input.value, &c), ReconMode::mse, &g);
    input.grad = ln.backward(c, g);
    return v;
  };
  EXPECT_LT(oracle::finite_difference_error(p, lg, l), 1e-6);
}

TEST(Training, SameSeedSameTrajectory) {
  std::vector<double> runs[2];
  for (auto& losses : runs) {
    TinyNet net(11);
    Adam opt(net.params(), {0.01});
    for (int i = 0; i < 20; ++i) {
      net.step(opt);
      losses.push_back(net.loss());
    }
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(Training, ShuffledBatchesCoverAllRows) {
  Rng rng(1);
  const auto batches = shuffled_batches(103, 10, rng);
  std::vector<int> seen(103, 0);
  for (const auto& b : batches)
    for (auto i : b) ++seen[i];
  EXPECT_EQ(batches.size(), 11u);
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Checkpoint, RoundTripIsExact) {
  TinyNet a(21), b(22);
  const auto dir = std::filesystem::temp_directory_path() / "proxyfair_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "net", a.params(), Json{{"note", "x"}});
  const Json meta = load_checkpoint(dir / "net", b.params());
  EXPECT_EQ(meta["note"], "x");
  EXPECT_EQ(a.l1.weight.value, b.l1.weight.value);
  EXPECT_EQ(a.l2.bias.value, b.l2.bias.value);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  TinyNet a(21);
  const auto dir = std::filesystem::temp_directory_path() / "proxyfair_ckpt_test2";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "net", a.params(), Json::object());
  Rng rng(1);
  Dense other("l1", 3, 5, rng);
  ParameterList p;
  other.collect(p);
  EXPECT_THROW(load_checkpoint(dir / "net", p), Error);
  std::filesystem::remove_all(dir);
}
