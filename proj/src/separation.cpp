#include "proxyfair/separation.hpp"

namespace proxyfair {

SeparationTraining parse_separation_training(const std::string& name) {
  if (name == "confusion") return SeparationTraining::confusion;
  if (name == "joint") return SeparationTraining::joint;
  throw Error("unknown separation training mode '" + name + "'");
}

std::string to_string(SeparationTraining t) { return t == SeparationTraining::confusion ? "confusion" : "joint"; }

RowVector class_marginal(std::span<const int> y) {
  if (y.empty()) throw Error("separation: empty label vector");
  double ones = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error("separation: label " + std::to_string(v) + " is not binary");
    ones += v;
  }
  const double p1 = ones / static_cast<double>(y.size());
  RowVector m(2);
  m << 1.0 - p1, p1;
  return m;
}

SeparationHead::SeparationHead(Index embedding_dim, Index hidden_dim, Rng& rng)
    : hidden("separation.hidden", embedding_dim, hidden_dim, rng), output("separation.output", hidden_dim, 2, rng) {}

Matrix SeparationHead::probabilities(const Matrix& h, Cache* cache) const {
  Matrix a = hidden.forward(h, nn::Activation::tanh);
  Matrix p = nn::softmax_rows(output.affine(a));
  if (cache) {
    cache->h = h;
    cache->hidden = a;
    cache->p = p;
  }
  return p;
}

Matrix SeparationHead::backward_kl(const Cache& cache, const RowVector& target, double weight, bool into_head) {
  const Matrix q = target.replicate(cache.p.rows(), 1);
  const Matrix d_logits = weight * nn::kl_softmax_grad(cache.p, q);
  Matrix d_hidden = d_logits * output.weight.value;
  Matrix d_pre = nn::activation_backward(Matrix(), cache.hidden, d_hidden, nn::Activation::tanh);
  if (into_head) {
    output.weight.grad.noalias() += d_logits.transpose() * cache.hidden;
    output.bias.grad.row(0) += d_logits.colwise().sum();
    hidden.weight.grad.noalias() += d_pre.transpose() * cache.h;
    hidden.bias.grad.row(0) += d_pre.colwise().sum();
  }
  return d_pre * hidden.weight.value;
}

void SeparationHead::backward_ce(const Cache& cache, std::span<const int> y, double weight) {
  std::vector<std::uint8_t> all(y.size(), 1);
  const Matrix d_logits =
      weight * nn::softmax_cross_entropy_grad(cache.p, y, all, static_cast<double>(std::max<std::size_t>(1, y.size())));
  const Matrix d_hidden = d_logits * output.weight.value;
  output.backward(cache.hidden, d_logits);
  const Matrix d_pre = nn::activation_backward(Matrix(), cache.hidden, d_hidden, nn::Activation::tanh);
  hidden.weight.grad.noalias() += d_pre.transpose() * cache.h;
  hidden.bias.grad.row(0) += d_pre.colwise().sum();
}

double separation_loss(const SeparationHead& head, const Matrix& h, std::span<const int> y) {
  if (static_cast<std::size_t>(h.rows()) != y.size())
    throw ShapeError("separation: " + std::to_string(h.rows()) + " embeddings vs " + std::to_string(y.size()) +
                     " labels");
  const RowVector marginal = class_marginal(y);
  const Matrix p = head.probabilities(h);
  return nn::loss_kl(p, marginal.replicate(p.rows(), 1));
}

}  // namespace proxyfair
