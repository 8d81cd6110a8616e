#include "proxyfair/transformer.hpp"

#include <cmath>
#include <numeric>

namespace proxyfair {

namespace {

Matrix random_matrix(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// dS for S -> softmax rows -> A given dA.
Matrix softmax_backward(const Matrix& a, const Matrix& da) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double dot = da.row(r).dot(a.row(r));
    out.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
  }
  return out;
}

}  // namespace

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, Matrix* weights) {
  if (q.cols() == 0) throw ShapeError("attention: key width d_k is zero");
  if (k.cols() != q.cols())
    throw ShapeError("attention: Q " + shape_string(q.rows(), q.cols()) + " and K " + shape_string(k.rows(), k.cols()) +
                     " widths differ");
  if (k.rows() != v.rows())
    throw ShapeError("attention: K has " + std::to_string(k.rows()) + " rows, V has " + std::to_string(v.rows()));
  const Matrix a = nn::softmax_rows((q * k.transpose()) / std::sqrt(static_cast<double>(q.cols())));
  Matrix out = a * v;
  if (weights) *weights = a;
  return out;
}

MultiHeadWeights MultiHeadWeights::random(Index width, int heads, Rng& rng) {
  if (heads <= 0 || width % heads != 0)
    throw ShapeError("multi-head: " + std::to_string(heads) + " heads do not divide width " + std::to_string(width));
  const Index dk = width / heads;
  MultiHeadWeights w;
  for (int i = 0; i < heads; ++i) {
    w.query.push_back(random_matrix(width, dk, rng));
    w.key.push_back(random_matrix(width, dk, rng));
    w.value.push_back(random_matrix(width, dk, rng));
  }
  w.output = random_matrix(width, width, rng);
  return w;
}

Matrix multi_head(const Matrix& q, const Matrix& k, const Matrix& v, const MultiHeadWeights& w) {
  const int h = w.heads();
  if (h == 0) throw ShapeError("multi-head: no heads");
  if (w.key.size() != w.query.size() || w.value.size() != w.query.size())
    throw ShapeError("multi-head: per-head projection counts differ");
  Index concat_width = 0;
  for (int i = 0; i < h; ++i) concat_width += w.value[static_cast<std::size_t>(i)].cols();
  if (concat_width != w.output.rows())
    throw ShapeError("multi-head: concatenated width " + std::to_string(concat_width) + " does not match W^O " +
                     shape_string(w.output.rows(), w.output.cols()));
  if (q.cols() % h != 0)
    throw ShapeError("multi-head: " + std::to_string(h) + " heads do not divide width " + std::to_string(q.cols()));
  Matrix concat(q.rows(), concat_width);
  Index col = 0;
  for (int i = 0; i < h; ++i) {
    const auto s = static_cast<std::size_t>(i);
    const Matrix head = attention(q * w.query[s], k * w.key[s], v * w.value[s]);
    concat.middleCols(col, head.cols()) = head;
    col += head.cols();
  }
  return concat * w.output;
}

EncoderBlock::EncoderBlock(const std::string& name, Index width, int n_heads, Index ffn_hidden, Rng& rng)
    : heads(n_heads), model_width(width) {
  if (n_heads <= 0 || width % n_heads != 0)
    throw ShapeError(name + ": " + std::to_string(n_heads) + " heads do not divide width " + std::to_string(width));
  wq = nn::Parameter(name + ".wq", random_matrix(width, width, rng));
  wk = nn::Parameter(name + ".wk", random_matrix(width, width, rng));
  wv = nn::Parameter(name + ".wv", random_matrix(width, width, rng));
  wo = nn::Parameter(name + ".wo", random_matrix(width, width, rng));
  ln1 = nn::LayerNorm(name + ".ln1", width);
  ffn_in = nn::Dense(name + ".ffn_in", width, ffn_hidden, rng);
  ffn_out = nn::Dense(name + ".ffn_out", ffn_hidden, width, rng);
  ln2 = nn::LayerNorm(name + ".ln2", width);
}

Matrix EncoderBlock::forward(const Matrix& x, Index seq_len, BlockCache* cache) const {
  if (x.cols() != model_width)
    throw ShapeError("encoder block: input " + shape_string(x.rows(), x.cols()) + ", width " +
                     std::to_string(model_width) + " expected");
  if (seq_len <= 0 || x.rows() % seq_len != 0) throw ShapeError("encoder block: rows not a multiple of seq_len");
  const Index dk = model_width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Index n_seq = x.rows() / seq_len;

  Matrix q = x * wq.value, k = x * wk.value, v = x * wv.value;
  Matrix concat(x.rows(), model_width);
  std::vector<Matrix> weights;
  if (cache) weights.reserve(static_cast<std::size_t>(n_seq * heads));
  for (Index b = 0; b < n_seq; ++b) {
    for (int i = 0; i < heads; ++i) {
      const auto qb = q.block(b * seq_len, i * dk, seq_len, dk);
      const auto kb = k.block(b * seq_len, i * dk, seq_len, dk);
      const auto vb = v.block(b * seq_len, i * dk, seq_len, dk);
      Matrix a = nn::softmax_rows((qb * kb.transpose()) * scale);
      concat.block(b * seq_len, i * dk, seq_len, dk).noalias() = a * vb;
      if (cache) weights.push_back(std::move(a));
    }
  }
  const Matrix r1 = x + concat * wo.value;
  nn::LayerNorm::Cache c1, c2;
  Matrix x1 = ln1.forward(r1, cache ? &c1 : nullptr);
  Matrix pre = ffn_in.affine(x1);
  Matrix act = nn::activate(pre, nn::Activation::gelu);
  const Matrix r2 = x1 + ffn_out.affine(act);
  Matrix y = ln2.forward(r2, cache ? &c2 : nullptr);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(weights);
    cache->concat = std::move(concat);
    cache->ln1 = std::move(c1);
    cache->ln2 = std::move(c2);
    cache->x1 = std::move(x1);
    cache->ffn_pre = std::move(pre);
    cache->ffn_act = std::move(act);
  }
  return y;
}

Matrix EncoderBlock::backward(const BlockCache& c, Index seq_len, const Matrix& g) {
  const Index dk = model_width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Index n_seq = c.x.rows() / seq_len;

  const Matrix d_r2 = ln2.backward(c.ln2, g);
  const Matrix d_act = ffn_out.backward(c.ffn_act, d_r2);
  const Matrix d_pre = nn::activation_backward(c.ffn_pre, c.ffn_act, d_act, nn::Activation::gelu);
  const Matrix d_x1 = d_r2 + ffn_in.backward(c.x1, d_pre);
  const Matrix d_r1 = ln1.backward(c.ln1, d_x1);

  wo.grad.noalias() += c.concat.transpose() * d_r1;
  const Matrix d_concat = d_r1 * wo.value.transpose();

  Matrix dq(c.x.rows(), model_width), dk_m(c.x.rows(), model_width), dv(c.x.rows(), model_width);
  std::size_t w = 0;
  for (Index b = 0; b < n_seq; ++b) {
    for (int i = 0; i < heads; ++i, ++w) {
      const Matrix& a = c.weights[w];
      const auto d_out = d_concat.block(b * seq_len, i * dk, seq_len, dk);
      const auto qb = c.q.block(b * seq_len, i * dk, seq_len, dk);
      const auto kb = c.k.block(b * seq_len, i * dk, seq_len, dk);
      const auto vb = c.v.block(b * seq_len, i * dk, seq_len, dk);
      const Matrix d_a = d_out * vb.transpose();
      dv.block(b * seq_len, i * dk, seq_len, dk).noalias() = a.transpose() * d_out;
      const Matrix d_s = softmax_backward(a, d_a) * scale;
      dq.block(b * seq_len, i * dk, seq_len, dk).noalias() = d_s * kb;
      dk_m.block(b * seq_len, i * dk, seq_len, dk).noalias() = d_s.transpose() * qb;
    }
  }
  wq.grad.noalias() += c.x.transpose() * dq;
  wk.grad.noalias() += c.x.transpose() * dk_m;
  wv.grad.noalias() += c.x.transpose() * dv;
  Matrix d_x = d_r1;
  d_x.noalias() += dq * wq.value.transpose();
  d_x.noalias() += dk_m * wk.value.transpose();
  d_x.noalias() += dv * wv.value.transpose();
  return d_x;
}

MultiHeadWeights EncoderBlock::attention_weights() const {
  const Index dk = model_width / heads;
  MultiHeadWeights w;
  for (int i = 0; i < heads; ++i) {
    w.query.push_back(wq.value.middleCols(i * dk, dk));
    w.key.push_back(wk.value.middleCols(i * dk, dk));
    w.value.push_back(wv.value.middleCols(i * dk, dk));
  }
  w.output = wo.value;
  return w;
}

void EncoderBlock::collect(nn::ParameterList& out) {
  out.push_back(&wq);
  out.push_back(&wk);
  out.push_back(&wv);
  out.push_back(&wo);
  ln1.collect(out);
  ffn_in.collect(out);
  ffn_out.collect(out);
  ln2.collect(out);
}

Pooling parse_pooling(const std::string& name) {
  if (name == "cls") return Pooling::cls;
  if (name == "mean") return Pooling::mean;
  throw Error("unknown pooling '" + name + "'");
}

std::string to_string(Pooling p) { return p == Pooling::cls ? "cls" : "mean"; }

TransformerModel::TransformerModel(Tokenizer tok, const TransformerConfig& cfg, Rng& rng)
    : tokenizer(std::move(tok)), config(cfg) {
  const Index w = cfg.model_width;
  if (cfg.heads <= 0 || w % cfg.heads != 0)
    throw ShapeError("transformer: " + std::to_string(cfg.heads) + " heads do not divide width " + std::to_string(w));
  std::normal_distribution<double> normal(0.0, 0.5);
  Matrix emb(tokenizer.vocab_size(), w);
  for (Index i = 0; i < emb.size(); ++i) emb.data()[i] = normal(rng);
  token_embedding = nn::Parameter("tf.token_embedding", std::move(emb));
  Matrix fe(tokenizer.sequence_length(), w);
  for (Index i = 0; i < fe.size(); ++i) fe.data()[i] = cfg.field_embeddings ? normal(rng) : 0.0;
  field_embedding = nn::Parameter("tf.field_embedding", std::move(fe));
  for (int b = 0; b < cfg.blocks; ++b)
    blocks.emplace_back("tf.block" + std::to_string(b), w, cfg.heads, cfg.ffn_hidden, rng);
  mlm_hidden = nn::Dense("tf.mlm_hidden", w, w, rng);
  for (int f = 0; f < tokenizer.field_count(); ++f)
    mlm_out.emplace_back("tf.mlm_out" + std::to_string(f), w, tokenizer.field(f).size, rng);
}

Matrix TransformerModel::encode(const TokenMatrix& tokens, Cache* cache) const {
  const Index len = sequence_length();
  if (tokens.cols() != len)
    throw ShapeError("transformer: sequences of length " + std::to_string(tokens.cols()) + ", expected " +
                     std::to_string(len));
  Matrix x(tokens.rows() * len, config.model_width);
  for (Index r = 0; r < tokens.rows(); ++r) {
    for (Index j = 0; j < len; ++j) {
      const int t = tokens(r, j);
      if (t < 0 || t >= token_embedding.value.rows()) throw ShapeError("transformer: token id out of range");
      x.row(r * len + j) = token_embedding.value.row(t);
      if (config.field_embeddings) x.row(r * len + j) += field_embedding.value.row(j);
    }
  }
  if (cache) {
    cache->x0 = x;
    cache->blocks.resize(blocks.size());
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) x = blocks[b].forward(x, len, cache ? &cache->blocks[b] : nullptr);
  if (cache) cache->hidden = x;
  return x;
}

Matrix TransformerModel::pool(const Matrix& hidden, Index rows) const {
  const Index len = sequence_length();
  Matrix h(rows, config.model_width);
  for (Index r = 0; r < rows; ++r) {
    if (config.pooling == Pooling::cls)
      h.row(r) = hidden.row(r * len);
    else
      h.row(r) = hidden.middleRows(r * len, len).colwise().mean();
  }
  return h;
}

Matrix TransformerModel::row_embeddings(const TokenMatrix& tokens) const {
  if (!trained) warn("transformer: extracting embeddings from an untrained model");
  const Index n = tokens.rows();
  constexpr Index kBlock = 256;
  const Index n_blocks = (n + kBlock - 1) / kBlock;
  Matrix out(n, config.model_width);
#pragma omp parallel for schedule(static)
  for (Index blk = 0; blk < n_blocks; ++blk) {
    const Index start = blk * kBlock;
    const Index count = std::min(kBlock, n - start);
    const TokenMatrix part = tokens.middleRows(start, count);
    out.middleRows(start, count) = pool(encode(part, nullptr), count);
  }
  return out;
}

std::vector<Matrix> TransformerModel::mlm_probabilities(const Matrix& h, HeadCache* cache) const {
  Matrix pre = mlm_hidden.affine(h);
  Matrix act = nn::activate(pre, nn::Activation::gelu);
  std::vector<Matrix> probs;
  probs.reserve(mlm_out.size());
  for (const auto& out : mlm_out) probs.push_back(nn::softmax_rows(out.affine(act)));
  if (cache) {
    cache->h = h;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->probs = probs;
  }
  return probs;
}

nn::ParameterList TransformerModel::parameters() {
  nn::ParameterList p;
  p.push_back(&token_embedding);
  if (config.field_embeddings) p.push_back(&field_embedding);
  for (auto& b : blocks) b.collect(p);
  mlm_hidden.collect(p);
  for (auto& o : mlm_out) o.collect(p);
  if (head) head->collect(p);
  return p;
}

MlmBatch make_mlm_batch(const TokenMatrix& tokens, std::span<const std::size_t> rows,
                        std::span<const std::int64_t> row_ids, const Tokenizer& tokenizer, double rate,
                        std::uint64_t seed, const Labels* y) {
  MlmBatch batch;
  const auto n = static_cast<Index>(rows.size());
  batch.input.resize(n, tokens.cols());
  batch.target.resize(n, tokens.cols());
  batch.mask = decltype(batch.mask)::Zero(n, tokenizer.field_count());
  std::vector<int> row(static_cast<std::size_t>(tokens.cols()));
  for (Index i = 0; i < n; ++i) {
    const auto r = static_cast<Index>(rows[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < tokens.cols(); ++j) row[static_cast<std::size_t>(j)] = tokens(r, j);
    const auto masked = mask_fields(row, tokenizer, rate, seed, row_ids[static_cast<std::size_t>(r)]);
    batch.target.row(i) = tokens.row(r);
    for (Index j = 0; j < tokens.cols(); ++j) batch.input(i, j) = masked.tokens[static_cast<std::size_t>(j)];
    for (int p : masked.positions) batch.mask(i, p - 1) = 1;
    if (y) batch.y.push_back((*y)[static_cast<std::size_t>(r)]);
  }
  return batch;
}

namespace {

struct FieldTargets {
  std::vector<int> local;
  std::vector<std::uint8_t> mask;
};

FieldTargets field_targets(const TransformerModel& model, const MlmBatch& batch, int f) {
  FieldTargets t;
  const auto n = static_cast<std::size_t>(batch.input.rows());
  t.local.resize(n);
  t.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Index>(i);
    t.mask[i] = batch.mask(r, f);
    t.local[i] = t.mask[i] ? model.tokenizer.to_local(f, batch.target(r, f + 1)) : 0;
  }
  return t;
}

double masked_nll(const Matrix& p, const FieldTargets& t) {
  double total = 0.0;
  for (std::size_t i = 0; i < t.mask.size(); ++i)
    if (t.mask[i]) total -= std::log(std::max(p(static_cast<Index>(i), t.local[i]), nn::kProbFloor));
  return total;
}

}  // namespace

double mlm_loss(const TransformerModel& model, const MlmBatch& batch) {
  const Matrix hidden = model.encode(batch.input, nullptr);
  const Matrix h = model.pool(hidden, batch.input.rows());
  const auto probs = model.mlm_probabilities(h, nullptr);
  const double count = static_cast<double>(batch.mask.cast<int>().sum());
  if (count == 0) {
    warn("mlm loss over an empty mask");
    return 0.0;
  }
  double total = 0.0;
  for (int f = 0; f < model.tokenizer.field_count(); ++f)
    total += masked_nll(probs[static_cast<std::size_t>(f)], field_targets(model, batch, f));
  return total / count;
}

double mlm_loss_and_grad(TransformerModel& model, const MlmBatch& batch, const RowVector& marginal) {
  const Index rows = batch.input.rows();
  const Index len = model.sequence_length();
  TransformerModel::Cache cache;
  const Matrix hidden = model.encode(batch.input, &cache);
  const Matrix h = model.pool(hidden, rows);
  TransformerModel::HeadCache hc;
  const auto probs = model.mlm_probabilities(h, &hc);

  const double count = static_cast<double>(batch.mask.cast<int>().sum());
  double loss = 0.0;
  Matrix d_act = Matrix::Zero(rows, model.config.model_width);
  if (count > 0) {
    for (int f = 0; f < model.tokenizer.field_count(); ++f) {
      const auto fi = static_cast<std::size_t>(f);
      const auto t = field_targets(model, batch, f);
      loss += masked_nll(probs[fi], t);
      const Matrix d_logits = nn::softmax_cross_entropy_grad(probs[fi], t.local, t.mask, count);
      d_act += model.mlm_out[fi].backward(hc.act, d_logits);
    }
    loss /= count;
  }
  const Matrix d_pre = nn::activation_backward(hc.pre, hc.act, d_act, nn::Activation::gelu);
  Matrix d_h = model.mlm_hidden.backward(h, d_pre);

  const double beta = model.config.separation.beta;
  if (model.head && beta > 0.0 && !batch.y.empty()) {
    SeparationHead::Cache sc;
    const Matrix p = model.head->probabilities(h, &sc);
    loss += beta * nn::loss_kl(p, marginal.replicate(p.rows(), 1));
    const bool joint = model.config.separation.training == SeparationTraining::joint;
    d_h += model.head->backward_kl(sc, marginal, beta, joint);
    if (!joint) model.head->backward_ce(sc, batch.y, 1.0);
  }

  Matrix d_hidden = Matrix::Zero(rows * len, model.config.model_width);
  for (Index r = 0; r < rows; ++r) {
    if (model.config.pooling == Pooling::cls) {
      d_hidden.row(r * len) = d_h.row(r);
    } else {
      for (Index j = 0; j < len; ++j) d_hidden.row(r * len + j) = d_h.row(r) / static_cast<double>(len);
    }
  }
  for (std::size_t b = model.blocks.size(); b-- > 0;)
    d_hidden = model.blocks[b].backward(cache.blocks[b], len, d_hidden);

  for (Index r = 0; r < rows; ++r) {
    for (Index j = 0; j < len; ++j) {
      model.token_embedding.grad.row(batch.input(r, j)) += d_hidden.row(r * len + j);
      if (model.config.field_embeddings) model.field_embedding.grad.row(j) += d_hidden.row(r * len + j);
    }
  }
  return loss;
}

double masked_field_accuracy(const TransformerModel& model, const MlmBatch& batch) {
  const Matrix h = model.pool(model.encode(batch.input, nullptr), batch.input.rows());
  const auto probs = model.mlm_probabilities(h, nullptr);
  std::size_t hits = 0, total = 0;
  for (int f = 0; f < model.tokenizer.field_count(); ++f) {
    const auto t = field_targets(model, batch, f);
    for (std::size_t i = 0; i < t.mask.size(); ++i) {
      if (!t.mask[i]) continue;
      Index best = 0;
      probs[static_cast<std::size_t>(f)].row(static_cast<Index>(i)).maxCoeff(&best);
      hits += best == t.local[i];
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

TransformerModel train_transformer_mlm(const EncodedTable& corpus, const TransformerConfig& config, const Labels* y) {
  config.train.validate();
  if (corpus.rows() == 0) throw Error("transformer: empty corpus");
  if (y && static_cast<Index>(y->size()) != corpus.rows())
    throw ShapeError("transformer: " + std::to_string(y->size()) + " labels for " + std::to_string(corpus.rows()) +
                     " rows");
  std::vector<std::size_t> all(static_cast<std::size_t>(corpus.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  Tokenizer tokenizer = Tokenizer::fit(corpus, all, config.bins);
  const TokenMatrix tokens = tokenizer.tokenize(corpus);

  Rng init_rng(config.train.seed);
  TransformerModel model(std::move(tokenizer), config, init_rng);
  const bool separate = y != nullptr && config.separation.beta > 0.0;
  if (!y && config.separation.beta > 0.0) warn("transformer: no labels supplied, separation term disabled");
  RowVector marginal;
  if (separate) {
    Rng head_rng(derive_seed(config.train.seed, 1));
    model.head.emplace(config.model_width, config.separation.hidden, head_rng);
    marginal = class_marginal(*y);
  }

  nn::Adam adam(model.parameters(), {config.train.learning_rate});
  Rng batch_rng(derive_seed(config.train.seed, 2));
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    const std::uint64_t mask_seed = derive_seed(config.train.seed, 100 + static_cast<std::uint64_t>(epoch));
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& rows :
         nn::shuffled_batches(all.size(), static_cast<std::size_t>(config.train.batch_size), batch_rng)) {
      const MlmBatch batch =
          make_mlm_batch(tokens, rows, corpus.ids, model.tokenizer, config.mask_rate, mask_seed, separate ? y : nullptr);
      adam.zero_grad();
      const double loss = mlm_loss_and_grad(model, batch, marginal);
      if (!std::isfinite(loss)) throw DivergenceError(epoch, "transformer loss is not finite");
      adam.step();
      total += loss * static_cast<double>(rows.size());
      seen += rows.size();
    }
    model.loss_curve.push_back(total / static_cast<double>(seen));
  }
  model.trained = true;
  return model;
}

}  // namespace proxyfair
