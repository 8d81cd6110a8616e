#pragma once

#include "proxyfair/nncore.hpp"
#include "proxyfair/separation.hpp"
#include "proxyfair/tokenizer.hpp"

#include <optional>

namespace proxyfair {

// softmax(Q K^T / sqrt(d_k)) V with d_k = Q.cols(). `weights` receives the
// row-stochastic attention matrix when given.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, Matrix* weights = nullptr);

// Per-head projections (right-multiplied, model_width x d_k) and the output
// projection W^O ((heads * d_v) x out_width).
struct MultiHeadWeights {
  std::vector<Matrix> query, key, value;
  Matrix output;

  int heads() const { return static_cast<int>(query.size()); }
  static MultiHeadWeights random(Index model_width, int heads, Rng& rng);
};

// Concat(head_1..head_h) W^O with head_i = attention(Q W^Q_i, K W^K_i, V W^V_i).
Matrix multi_head(const Matrix& q, const Matrix& k, const Matrix& v, const MultiHeadWeights& w);

struct BlockCache {
  Matrix x, q, k, v;
  std::vector<Matrix> weights;  // sequence-major, then head
  Matrix concat;
  nn::LayerNorm::Cache ln1, ln2;
  Matrix x1, ffn_pre, ffn_act;
};

// Post-norm encoder block: x1 = LN(x + MHA(x)), y = LN(x1 + FFN(x1)).
// Inputs stack `seq_len`-token sequences row-wise.
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(const std::string& name, Index model_width, int heads, Index ffn_hidden, Rng& rng);

  Matrix forward(const Matrix& x, Index seq_len, BlockCache* cache) const;
  Matrix backward(const BlockCache& cache, Index seq_len, const Matrix& grad_out);
  MultiHeadWeights attention_weights() const;
  void collect(nn::ParameterList& out);

  int heads = 1;
  Index model_width = 0;
  nn::Parameter wq, wk, wv, wo;
  nn::LayerNorm ln1, ln2;
  nn::Dense ffn_in, ffn_out;
};

enum class Pooling { cls, mean };
Pooling parse_pooling(const std::string& name);
std::string to_string(Pooling p);

struct TransformerConfig {
  Index model_width = 48;
  int heads = 6;
  int blocks = 3;
  Index ffn_hidden = 128;
  int bins = 10;
  double mask_rate = 0.15;
  bool field_embeddings = true;
  Pooling pooling = Pooling::cls;
  nn::TrainConfig train{4, 32, 1e-3, 7};
  SeparationConfig separation;
};

struct MlmBatch {
  TokenMatrix input;   // with MASK tokens substituted
  TokenMatrix target;  // original tokens
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mask;  // rows x fields
  Labels y;
};

class TransformerModel {
 public:
  struct Cache {
    Matrix x0;
    std::vector<BlockCache> blocks;
    Matrix hidden;
  };
  struct HeadCache {
    Matrix h, pre, act;
    std::vector<Matrix> probs;  // per field, rows x field vocab
  };

  TransformerModel() = default;
  TransformerModel(Tokenizer tokenizer, const TransformerConfig& config, Rng& rng);

  Index sequence_length() const { return tokenizer.sequence_length(); }

  // Final hidden states, (rows * sequence_length) x model_width.
  Matrix encode(const TokenMatrix& tokens, Cache* cache) const;
  // Row embedding per sequence (CLS vector or mean over positions).
  Matrix pool(const Matrix& hidden, Index rows) const;
  Matrix row_embeddings(const TokenMatrix& tokens) const;

  // p_f = softmax(MLP_f(h)) per field.
  std::vector<Matrix> mlm_probabilities(const Matrix& h, HeadCache* cache) const;

  nn::ParameterList parameters();

  Tokenizer tokenizer;
  TransformerConfig config;
  nn::Parameter token_embedding;  // vocab x width
  nn::Parameter field_embedding;  // sequence_length x width
  std::vector<EncoderBlock> blocks;
  nn::Dense mlm_hidden;
  std::vector<nn::Dense> mlm_out;  // one output head per field
  std::optional<SeparationHead> head;
  std::vector<double> loss_curve;
  bool trained = false;
};

MlmBatch make_mlm_batch(const TokenMatrix& tokens, std::span<const std::size_t> rows,
                        std::span<const std::int64_t> row_ids, const Tokenizer& tokenizer, double rate,
                        std::uint64_t seed, const Labels* y = nullptr);

// Cross-entropy over masked fields only, averaged over masked positions.
double mlm_loss(const TransformerModel& model, const MlmBatch& batch);
// Loss_T (+ beta * separation term) with gradient accumulation.
double mlm_loss_and_grad(TransformerModel& model, const MlmBatch& batch, const RowVector& marginal);
double masked_field_accuracy(const TransformerModel& model, const MlmBatch& batch);

// Fits the tokenizer on every corpus row, then trains with masked-field modelling.
TransformerModel train_transformer_mlm(const EncodedTable& corpus, const TransformerConfig& config,
                                       const Labels* y = nullptr);

}  // namespace proxyfair
