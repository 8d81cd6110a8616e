#pragma once

#include "proxyfair/nncore.hpp"

#include <span>

namespace proxyfair {

// How the separation head itself is trained.
//   confusion: the head learns to predict Y (cross-entropy) while the
//              embedding is pushed by beta * KL(p || marginal);
//   joint:     head and embedding both minimise beta * KL(p || marginal).
enum class SeparationTraining { confusion, joint };
SeparationTraining parse_separation_training(const std::string& name);
std::string to_string(SeparationTraining t);

struct SeparationConfig {
  double beta = 0.1;
  Index hidden = 16;
  SeparationTraining training = SeparationTraining::confusion;
};

// [P(Y = 0), P(Y = 1)]; throws on labels outside {0, 1} or empty input.
RowVector class_marginal(std::span<const int> y);

// MLP over embeddings producing a two-class distribution p = softmax(MLP(h)).
class SeparationHead {
 public:
  struct Cache {
    Matrix h;
    Matrix hidden;
    Matrix p;
  };

  SeparationHead() = default;
  SeparationHead(Index embedding_dim, Index hidden_dim, Rng& rng);

  Matrix probabilities(const Matrix& h, Cache* cache = nullptr) const;

  // Gradient of weight * KL(p || target) w.r.t. h. Head gradients are
  // accumulated only when `into_head` is set.
  Matrix backward_kl(const Cache& cache, const RowVector& target, double weight, bool into_head);
  // Accumulates head gradients of weight * CE(p, y); does not touch h.
  void backward_ce(const Cache& cache, std::span<const int> y, double weight);

  void collect(nn::ParameterList& out) {
    hidden.collect(out);
    output.collect(out);
  }

  nn::Dense hidden;
  nn::Dense output;
};

// KL(p || marginal(Y)) averaged over rows, p from the head applied to h.
double separation_loss(const SeparationHead& head, const Matrix& h, std::span<const int> y);

}  // namespace proxyfair
