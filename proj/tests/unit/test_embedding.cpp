#include "oracles.hpp"
#include "proxyfair/autoencoder.hpp"
#include "proxyfair/clustering.hpp"
#include "proxyfair/transformer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace proxyfair;

namespace {

std::vector<std::size_t> all_rows(Index n) {
  std::vector<std::size_t> r(static_cast<std::size_t>(n));
  std::iota(r.begin(), r.end(), 0);
  return r;
}

// 14 categorical attributes plus group and label.
EncodedTable wide_table() {
  std::vector<ColumnSpec> cols;
  for (int i = 0; i < 14; ++i) cols.push_back({"c" + std::to_string(i), ColumnKind::categorical, {"x", "y", "z"}});
  cols.push_back({"g", ColumnKind::sensitive, {"a", "b"}});
  cols.push_back({"t", ColumnKind::target, {"n", "p"}});
  const FeatureSchema schema(cols);
  std::string text;
  const char* lv[] = {"x", "y", "z"};
  for (int r = 0; r < 30; ++r) {
    for (int i = 0; i < 14; ++i) text += std::string(lv[(r + i) % 3]) + ", ";
    text += std::string(r % 2 ? "a" : "b") + ", " + (r % 3 ? "n" : "p") + "\n";
  }
  return clean_and_encode(parse_adult(text, schema), schema, {0.2, 1});
}

TransformerConfig small_transformer(Index width = 8, int heads = 2, int blocks = 1) {
  TransformerConfig c;
  c.model_width = width;
  c.heads = heads;
  c.blocks = blocks;
  c.ffn_hidden = 10;
  c.bins = 4;
  return c;
}

}  // namespace

// ---- autoencoder --------------------------------------------------------

TEST(Autoencoder, UntrainedOutputsAreFinite) {
  AutoencoderConfig c;
  c.latent_dim = 4;
  Rng rng(1);
  AutoencoderModel m(6, c, rng);
  const auto out = ae_forward(m, oracle::random_matrix(10, 6, 2));
  EXPECT_TRUE(out.h.allFinite());
  EXPECT_TRUE(out.x_hat.allFinite());
}

TEST(Autoencoder, IdentityEncoderPassesInput) {
  AutoencoderModel m(nn::Dense("enc", Matrix::Identity(3, 3), RowVector::Zero(3)),
                     nn::Dense("dec", Matrix::Identity(3, 3), RowVector::Zero(3)), nn::Activation::identity,
                     nn::Activation::identity);
  const Matrix x = oracle::random_matrix(5, 3, 3);
  EXPECT_EQ(ae_forward(m, x).h, x);
}

TEST(Autoencoder, TanhOfZero) {
  AutoencoderModel m(nn::Dense("enc", Matrix::Ones(1, 1), RowVector::Zero(1)),
                     nn::Dense("dec", Matrix::Ones(1, 1), RowVector::Zero(1)), nn::Activation::tanh,
                     nn::Activation::relu);
  EXPECT_EQ(ae_forward(m, Matrix::Zero(1, 1)).h(0, 0), 0.0);
}

TEST(Autoencoder, ShapeMismatchThrows) {
  AutoencoderConfig c;
  c.latent_dim = 2;
  Rng rng(1);
  AutoencoderModel m(4, c, rng);
  EXPECT_THROW(ae_forward(m, Matrix::Zero(2, 5)), ShapeError);
}

TEST(Autoencoder, ConstantInputIsLearned) {
  AutoencoderConfig c;
  c.latent_dim = 2;
  c.train = {300, 8, 1e-2, 3};
  // A relu output unit that starts dead never recovers, so the capacity
  // check uses a linear decoder.
  c.decoder_activation = nn::Activation::identity;
  const Matrix x = Matrix::Constant(32, 4, 0.7);
  const auto m = train_autoencoder(x, c);
  EXPECT_LT(m.reconstruction_curve.back(), 1e-3);
}

TEST(Autoencoder, GradientJointSeparation) {
  AutoencoderConfig c;
  c.latent_dim = 3;
  c.separation = {0.7, 4, SeparationTraining::joint};
  Rng rng(4);
  AutoencoderModel m(5, c, rng);
  Rng head_rng(5);
  m.head.emplace(3, 4, head_rng);
  const Matrix x = oracle::random_matrix(6, 5, 6);
  const Labels y{0, 1, 1, 0, 1, 1};
  const RowVector marginal = class_marginal(y);
  auto p = m.parameters();
  for (auto mode : {nn::ReconMode::mse}) {
    c.reconstruction = mode;
    // relu decoder has kinks; identity keeps the check smooth.
    m.f2 = nn::Activation::sigmoid;
    auto lg = [&] {
      nn::zero_grads(p);
      return autoencoder_loss_and_grad(m, x, &y, c, marginal);
    };
    auto l = [&] {
      const auto out = m.forward(x);
      return nn::loss_reconstruction(x, out.x_hat, mode) + 0.7 * separation_loss(*m.head, out.h, y);
    };
    EXPECT_LT(oracle::finite_difference_error(p, lg, l), 1e-4);
  }
}

TEST(Autoencoder, ZeroBetaMatchesPlainRun) {
  AutoencoderConfig c;
  c.latent_dim = 3;
  c.train = {5, 16, 1e-3, 9};
  c.separation.beta = 0.0;
  const auto t = make_synthetic(200, 1.0, 2);
  const auto a = train_autoencoder(t.X, c, &t.Y);
  const auto b = train_autoencoder(t.X, c);
  EXPECT_EQ(a.encoder.weight.value, b.encoder.weight.value);
  EXPECT_EQ(a.decoder.bias.value, b.decoder.bias.value);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Autoencoder, SameSeedSameLosses) {
  AutoencoderConfig c;
  c.latent_dim = 3;
  c.train = {4, 16, 1e-3, 9};
  const auto t = make_synthetic(200, 1.0, 2);
  EXPECT_EQ(train_autoencoder(t.X, c, &t.Y).loss_curve, train_autoencoder(t.X, c, &t.Y).loss_curve);
}

TEST(Autoencoder, PlantedGroupIsRecovered) {
  AutoencoderConfig c;
  c.latent_dim = 4;
  c.train = {30, 32, 1e-3, 1};
  const auto t = make_synthetic(1000, 1.0, 4);
  const auto m = train_autoencoder(t.X, c, &t.Y);
  const auto r = kmeans(standardize_columns(m.encode(t.X)), 2, 10, 1);
  EXPECT_GE(recovery_accuracy(r.labels, t.S), 0.9);
}

TEST(Autoencoder, EmbeddingsAreRowwise) {
  AutoencoderConfig c;
  c.latent_dim = 3;
  c.train = {2, 16, 1e-3, 9};
  const auto t = make_synthetic(100, 1.0, 2);
  const auto m = train_autoencoder(t.X, c);
  Matrix x = t.X;
  x.row(5) = x.row(9);
  const Matrix h = m.encode(x);
  EXPECT_EQ(h.rows(), x.rows());
  EXPECT_EQ(h.row(5), h.row(9));
}

TEST(Autoencoder, UntrainedExtractionWarns) {
  int warnings = 0;
  set_warning_handler([&](const std::string&) { ++warnings; });
  AutoencoderConfig c;
  c.latent_dim = 2;
  Rng rng(1);
  AutoencoderModel m(4, c, rng);
  const Matrix h = m.encode(Matrix::Zero(3, 4));
  set_warning_handler(nullptr);
  EXPECT_EQ(warnings, 1);
  EXPECT_EQ(h.rows(), 3);
}

TEST(Autoencoder, DivergenceReportsEpoch) {
  AutoencoderConfig c;
  c.latent_dim = 2;
  c.train = {3, 4, 1e-3, 1};
  Matrix x = Matrix::Ones(8, 3);
  x(2, 1) = std::nan("");
  try {
    train_autoencoder(x, c);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 0);
  }
}

// ---- separation head ----------------------------------------------------

TEST(Separation, MarginalOutputHasZeroLoss) {
  Rng rng(1);
  SeparationHead head(3, 4, rng);
  Labels y(100, 1);
  std::fill(y.begin(), y.begin() + 24, 0);
  head.output.weight.value.setZero();
  head.output.bias.value << std::log(0.24), std::log(0.76);
  EXPECT_NEAR(separation_loss(head, oracle::random_matrix(100, 3, 2), y), 0.0, 1e-12);
}

TEST(Separation, HandComputedKl) {
  Rng rng(1);
  SeparationHead head(3, 4, rng);
  Labels y(100, 1);
  std::fill(y.begin(), y.begin() + 24, 0);
  head.output.weight.value.setZero();
  head.output.bias.value << std::log(0.9), std::log(0.1);
  const double expected = 0.9 * std::log(0.9 / 0.24) + 0.1 * std::log(0.1 / 0.76);
  EXPECT_NEAR(separation_loss(head, oracle::random_matrix(100, 3, 2), y), expected, 1e-12);
  EXPECT_NEAR(expected, 0.987, 1e-3);
}

TEST(Separation, InvalidLabelsThrow) {
  Rng rng(1);
  SeparationHead head(2, 2, rng);
  EXPECT_THROW(separation_loss(head, Matrix::Zero(2, 2), Labels{0, 2}), Error);
}

TEST(Separation, KlGradientFiniteDifference) {
  Rng rng(3);
  SeparationHead head(4, 5, rng);
  nn::Parameter h("h", oracle::random_matrix(7, 4, 4));
  const Labels y{0, 1, 1, 1, 0, 1, 1};
  const RowVector marginal = class_marginal(y);
  nn::ParameterList p;
  head.collect(p);
  p.push_back(&h);
  auto lg = [&] {
    nn::zero_grads(p);
    SeparationHead::Cache c;
    const Matrix probs = head.probabilities(h.value, &c);
    h.grad = head.backward_kl(c, marginal, 0.5, true);
    return 0.5 * nn::loss_kl(probs, marginal.replicate(7, 1));
  };
  auto l = [&] { return 0.5 * separation_loss(head, h.value, y); };
  EXPECT_LT(oracle::finite_difference_error(p, lg, l), 1e-4);
}

TEST(Separation, CrossEntropyGradientFiniteDifference) {
  Rng rng(3);
  SeparationHead head(4, 5, rng);
  const Matrix h = oracle::random_matrix(7, 4, 4);
  const Labels y{0, 1, 1, 1, 0, 1, 1};
  nn::ParameterList p;
  head.collect(p);
  auto ce = [&] {
    const Matrix probs = head.probabilities(h);
    double total = 0.0;
    for (Index i = 0; i < 7; ++i) total -= std::log(probs(i, y[static_cast<std::size_t>(i)]));
    return total / 7.0;
  };
  auto lg = [&] {
    nn::zero_grads(p);
    SeparationHead::Cache c;
    head.probabilities(h, &c);
    head.backward_ce(c, y, 1.0);
    return ce();
  };
  EXPECT_LT(oracle::finite_difference_error(p, lg, ce), 1e-4);
}

// ---- attention ----------------------------------------------------------

TEST(Attention, IdenticalKeysAverageValues) {
  const Matrix q = oracle::random_matrix(3, 4, 1), v = oracle::random_matrix(5, 4, 2);
  const Matrix k = Matrix::Ones(5, 4);
  Matrix w;
  const Matrix out = attention(q, k, v, &w);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR((out.row(i) - v.colwise().mean()).norm(), 0.0, 1e-12);
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(w(i, j), 0.2, 1e-12);
  }
}

TEST(Attention, IdentityInputs) {
  const Matrix i2 = Matrix::Identity(2, 2);
  const Matrix out = attention(i2, i2, i2);
  EXPECT_NEAR(out(0, 0), 0.6698, 1e-4);
  EXPECT_NEAR(out(0, 1), 0.3302, 1e-4);
}

TEST(Attention, ZeroValuesGiveZero) {
  EXPECT_EQ(attention(oracle::random_matrix(3, 2, 1), oracle::random_matrix(3, 2, 2), Matrix::Zero(3, 2)),
            Matrix::Zero(3, 2));
}

TEST(Attention, EmptyKeyDimensionThrows) { EXPECT_THROW(attention(Matrix(2, 0), Matrix(2, 0), Matrix::Ones(2, 2)), Error); }

TEST(MultiHead, SingleIdentityHeadIsAttention) {
  MultiHeadWeights w;
  w.query = {Matrix::Identity(4, 4)};
  w.key = {Matrix::Identity(4, 4)};
  w.value = {Matrix::Identity(4, 4)};
  w.output = Matrix::Identity(4, 4);
  const Matrix q = oracle::random_matrix(3, 4, 1), k = oracle::random_matrix(3, 4, 2), v = oracle::random_matrix(3, 4, 3);
  EXPECT_LT((multi_head(q, k, v, w) - attention(q, k, v)).norm(), 1e-12);
}

TEST(MultiHead, SixHeadsKeepWidth) {
  Rng rng(1);
  const auto w = MultiHeadWeights::random(48, 6, rng);
  const Matrix x = oracle::random_matrix(15, 48, 2);
  EXPECT_EQ(multi_head(x, x, x, w).cols(), 48);
}

TEST(MultiHead, IndivisibleWidthThrows) {
  Rng rng(1);
  EXPECT_THROW(MultiHeadWeights::random(10, 3, rng), Error);
}

TEST(MultiHead, HeadPermutationWithMatchingOutputRows) {
  Rng rng(7);
  const auto w = MultiHeadWeights::random(12, 3, rng);
  const std::vector<int> perm{2, 0, 1};
  MultiHeadWeights p = w;
  const Index dk = 4;
  for (int i = 0; i < 3; ++i) {
    p.query[i] = w.query[perm[i]];
    p.key[i] = w.key[perm[i]];
    p.value[i] = w.value[perm[i]];
    p.output.middleRows(i * dk, dk) = w.output.middleRows(perm[i] * dk, dk);
  }
  const Matrix x = oracle::random_matrix(5, 12, 3);
  EXPECT_LT((multi_head(x, x, x, w) - multi_head(x, x, x, p)).norm(), 1e-12);
}

TEST(EncoderBlock, GradientFiniteDifference) {
  Rng rng(11);
  EncoderBlock block("b", 8, 2, 6, rng);
  // Non-trivial layer-norm parameters.
  for (auto* ln : {&block.ln1, &block.ln2}) {
    ln->gain.value = RowVector::Ones(8) + 0.2 * oracle::random_matrix(1, 8, 12);
    ln->shift.value = 0.1 * oracle::random_matrix(1, 8, 13);
  }
  nn::Parameter x("x", oracle::random_matrix(6, 8, 14));
  const Matrix r = oracle::random_matrix(6, 8, 15);
  nn::ParameterList p;
  block.collect(p);
  p.push_back(&x);
  auto l = [&] { return block.forward(x.value, 3, nullptr).cwiseProduct(r).sum(); };
  auto lg = [&] {
    nn::zero_grads(p);
    BlockCache c;
    const double v = block.forward(x.value, 3, &c).cwiseProduct(r).sum();
    x.grad = block.backward(c, 3, r);
    return v;
  };
  EXPECT_LT(oracle::finite_difference_error(p, lg, l, 1e-6, 1e-7), 1e-3);
}

// ---- tokenizer ----------------------------------------------------------

TEST(Tokenizer, FourteenFieldsGiveFifteenTokens) {
  const auto t = wide_table();
  const auto tok = Tokenizer::fit(t, all_rows(t.rows()));
  const auto seq = tok.tokenize_row(t, 0);
  EXPECT_EQ(seq.size(), 15u);
  EXPECT_EQ(seq[0], Tokenizer::kCls);
}

TEST(Tokenizer, MedianFallsInMiddleBin) {
  const auto t = make_synthetic(1001, 0.5, 3);
  const auto rows = all_rows(t.rows());
  const auto tok = Tokenizer::fit(t, rows, 10);
  std::vector<double> col(t.X.col(0).data(), t.X.col(0).data() + 0);
  for (Index i = 0; i < t.rows(); ++i) col.push_back(t.X(i, 0));
  std::sort(col.begin(), col.end());
  const double median = quantile_sorted(col, 0.5);
  const int bin = Tokenizer::bin_of(tok.field(0).edges, median);
  EXPECT_TRUE(bin == 4 || bin == 5) << bin;
  EXPECT_EQ(tok.field(0).edges.size(), 9u);
}

TEST(Tokenizer, BinsAreRightClosed) {
  const std::vector<double> edges{1.0, 2.0, 3.0};
  EXPECT_EQ(Tokenizer::bin_of(edges, 1.0), 0);
  EXPECT_EQ(Tokenizer::bin_of(edges, 1.5), 1);
  EXPECT_EQ(Tokenizer::bin_of(edges, 3.5), 3);
}

TEST(Tokenizer, UnseenLevelIsUnk) {
  const auto t = wide_table();
  // Fit on rows where c0 never takes level x (row r has level (r % 3)).
  std::vector<std::size_t> rows;
  for (Index r = 0; r < t.rows(); ++r)
    if (decode_level(t, 0, r) != 0) rows.push_back(static_cast<std::size_t>(r));
  const auto tok = Tokenizer::fit(t, rows);
  Index row = 0;
  while (decode_level(t, 0, row) != 0) ++row;
  EXPECT_EQ(tok.tokenize_row(t, row)[1], tok.unk_token(0));
}

TEST(Masking, FifteenPercentOfFourteenIsTwo) {
  const auto t = wide_table();
  const auto tok = Tokenizer::fit(t, all_rows(t.rows()));
  const auto seq = tok.tokenize_row(t, 0);
  const auto m = mask_fields(seq, tok, 0.15, 3, 0);
  EXPECT_EQ(m.positions.size(), 2u);
  for (int p : m.positions) EXPECT_EQ(m.tokens[static_cast<std::size_t>(p)], tok.mask_token(p - 1));
}

TEST(Masking, FloorGuardMasksOne) { EXPECT_EQ(masked_field_count(14, 0.01), 1); }

TEST(Masking, SameSeedSameMask) {
  const auto t = wide_table();
  const auto tok = Tokenizer::fit(t, all_rows(t.rows()));
  const auto seq = tok.tokenize_row(t, 3);
  EXPECT_EQ(mask_fields(seq, tok, 0.3, 8, 3).positions, mask_fields(seq, tok, 0.3, 8, 3).positions);
}

TEST(Masking, MaskDependsOnRowIdentity) {
  const auto t = wide_table();
  const auto tok = Tokenizer::fit(t, all_rows(t.rows()));
  const auto seq = tok.tokenize_row(t, 3);
  int differing = 0;
  for (std::int64_t id = 0; id < 20; ++id)
    differing += mask_fields(seq, tok, 0.3, 8, id).positions != mask_fields(seq, tok, 0.3, 8, 0).positions;
  EXPECT_GT(differing, 0);
}

// ---- transformer MLM ----------------------------------------------------

TEST(Transformer, MlmHeadAndEncoderGradients) {
  const auto t = make_synthetic(12, 1.0, 5);
  auto cfg = small_transformer();
  cfg.separation = {0.5, 3, SeparationTraining::joint};
  const auto rows = all_rows(t.rows());
  Rng rng(2);
  TransformerModel m(Tokenizer::fit(t, rows, 3), cfg, rng);
  Rng head_rng(3);
  m.head.emplace(cfg.model_width, 3, head_rng);
  const auto tokens = m.tokenizer.tokenize(t);
  const auto batch = make_mlm_batch(tokens, rows, t.ids, m.tokenizer, 0.3, 4, &t.Y);
  const RowVector marginal = class_marginal(batch.y);
  auto p = m.parameters();
  auto l = [&] {
    const Matrix h = m.pool(m.encode(batch.input, nullptr), batch.input.rows());
    return mlm_loss(m, batch) + 0.5 * separation_loss(*m.head, h, batch.y);
  };
  auto lg = [&] {
    nn::zero_grads(p);
    return mlm_loss_and_grad(m, batch, marginal);
  };
  EXPECT_LT(oracle::finite_difference_error(p, lg, l, 1e-6, 1e-7), 1e-3);
  // The output heads alone are smooth and held to the tighter bound.
  nn::ParameterList heads;
  m.mlm_hidden.collect(heads);
  for (auto& o : m.mlm_out) o.collect(heads);
  EXPECT_LT(oracle::finite_difference_error(heads, lg, l), 1e-4);
}

TEST(Transformer, MeanPoolingGradients) {
  const auto t = make_synthetic(8, 1.0, 5);
  auto cfg = small_transformer();
  cfg.pooling = Pooling::mean;
  const auto rows = all_rows(t.rows());
  Rng rng(2);
  TransformerModel m(Tokenizer::fit(t, rows, 3), cfg, rng);
  const auto batch = make_mlm_batch(m.tokenizer.tokenize(t), rows, t.ids, m.tokenizer, 0.3, 4);
  auto p = m.parameters();
  auto lg = [&] {
    nn::zero_grads(p);
    return mlm_loss_and_grad(m, batch, RowVector());
  };
  EXPECT_LT(oracle::finite_difference_error(p, lg, [&] { return mlm_loss(m, batch); }, 1e-6, 1e-7), 1e-3);
}

TEST(Transformer, OutOfRangeTokenThrows) {
  const auto t = make_synthetic(8, 1.0, 5);
  Rng rng(2);
  TransformerModel m(Tokenizer::fit(t, all_rows(t.rows()), 3), small_transformer(), rng);
  TokenMatrix bad = m.tokenizer.tokenize(t);
  bad(0, 1) = m.tokenizer.vocab_size() + 3;
  EXPECT_THROW(m.encode(bad, nullptr), Error);
}

TEST(Transformer, RepeatedRowIsMemorised) {
  const auto base = make_synthetic(10, 1.0, 5);
  const std::vector<std::size_t> same(64, 3);
  const auto t = take_rows(base, same);
  auto cfg = small_transformer(12, 2, 1);
  cfg.train = {40, 16, 1e-2, 1};
  const auto m = train_transformer_mlm(t, cfg);
  const auto rows = all_rows(t.rows());
  std::vector<std::int64_t> ids(rows.begin(), rows.end());
  const auto batch = make_mlm_batch(m.tokenizer.tokenize(t), rows, ids, m.tokenizer, 0.3, 999);
  EXPECT_EQ(masked_field_accuracy(m, batch), 1.0);
}

TEST(Transformer, PlantedGroupIsRecovered) {
  const auto t = make_synthetic(1000, 1.0, 4);
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = small_transformer(16, 2, 1);
    cfg.train = {8, 32, 1e-3, seed};
    const auto m = train_transformer_mlm(t, cfg, &t.Y);
    const Matrix emb = m.row_embeddings(m.tokenizer.tokenize(t));
    EXPECT_EQ(emb.rows(), t.rows());
    const auto r = kmeans(standardize_columns(emb), 2, 10, 1);
    EXPECT_GE(recovery_accuracy(r.labels, t.S), 0.9) << "seed " << seed;
  }
}

TEST(Transformer, SameSeedSameLosses) {
  const auto t = make_synthetic(64, 1.0, 4);
  auto cfg = small_transformer();
  cfg.train = {2, 16, 1e-3, 1};
  EXPECT_EQ(train_transformer_mlm(t, cfg, &t.Y).loss_curve, train_transformer_mlm(t, cfg, &t.Y).loss_curve);
}
