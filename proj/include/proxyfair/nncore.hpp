#pragma once

// Minimal differentiable building blocks: dense layers, activations,
// layer norm, losses, Adam and a central-difference gradient checker.
// Layers keep no forward state; callers hold the inputs they need for the
// backward pass. Gradients accumulate into Parameter::grad.

#include "proxyfair/artifacts.hpp"
#include "proxyfair/common.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace proxyfair::nn {

enum class Activation { identity, tanh, relu, sigmoid, softmax, gelu };
Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

Matrix activate(const Matrix& z, Activation a);
// Gradient w.r.t. the pre-activation z given the upstream gradient on a = act(z).
Matrix activation_backward(const Matrix& z, const Matrix& a, const Matrix& grad_a, Activation act);
Matrix softmax_rows(const Matrix& z);

// y = act(W x + b) applied row-wise; W is out x in.
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, Index in, Index out, Rng& rng);
  Dense(const std::string& name, Matrix weight, RowVector bias);

  Index in_dim() const { return weight.value.cols(); }
  Index out_dim() const { return weight.value.rows(); }

  Matrix affine(const Matrix& x) const;
  Matrix forward(const Matrix& x, Activation act) const { return activate(affine(x), act); }
  // Accumulates dW, db for the affine map and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& grad_affine);
  void collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter weight;
  Parameter bias;  // 1 x out
};

Matrix dense_forward(const Dense& layer, const Matrix& input, Activation act);

// Row-wise layer normalisation with learned gain and shift.
class LayerNorm {
 public:
  struct Cache {
    Matrix normalized;
    Vector inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index width);
  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& grad_out);
  void collect(ParameterList& out) {
    out.push_back(&gain);
    out.push_back(&shift);
  }

  Parameter gain;
  Parameter shift;
  double epsilon = 1e-5;
};

// ---- losses -------------------------------------------------------------

enum class ReconMode { mse, mae };
ReconMode parse_recon_mode(const std::string& name);
std::string to_string(ReconMode m);

// Mean over all entries of (x - x_hat)^2 or |x - x_hat|. If grad is given it
// receives dL/dx_hat.
double loss_reconstruction(const Matrix& x, const Matrix& x_hat, ReconMode mode, Matrix* grad = nullptr);

constexpr double kProbFloor = 1e-12;

// -sum_masked y log p, averaged over the masked rows. Unmasked rows add nothing.
double loss_cross_entropy(const Matrix& p, const Matrix& y_onehot, std::span<const std::uint8_t> mask);
// Gradient of loss_cross_entropy composed with softmax, w.r.t. the logits,
// normalised by `denominator` (number of masked rows in the whole objective).
Matrix softmax_cross_entropy_grad(const Matrix& p, std::span<const int> target,
                                  std::span<const std::uint8_t> mask, double denominator);

// Mean over rows of KL(p_r || q_r) in nats.
double loss_kl(const Matrix& p, const Matrix& q);
// dKL/dlogits when p = softmax(logits), averaged over rows.
Matrix kl_softmax_grad(const Matrix& p, const Matrix& q);

// Binary cross-entropy on logits, averaged; grad receives dL/dz.
double bce_with_logits(const Vector& z, std::span<const int> y, Vector* grad = nullptr);
double sigmoid(double z);
double softplus(double z);

// ---- optimisation -------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

OptimizerState make_adam_state(const ParameterList& params, AdamConfig config = {});
// Applies one Adam update from the accumulated gradients.
void adam_step(const ParameterList& params, OptimizerState& state);

class Adam {
 public:
  Adam(ParameterList params, AdamConfig config = {});
  void zero_grad();
  void step() { adam_step(params_, state_); }
  const OptimizerState& state() const { return state_; }
  const ParameterList& params() const { return params_; }

 private:
  ParameterList params_;
  OptimizerState state_;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
  void validate() const;
};

// Shuffled contiguous batches covering [0, n).
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch, Rng& rng);
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

void zero_grads(const ParameterList& params);
bool all_finite(const ParameterList& params);

// ---- gradient checking --------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index worst_entry = -1;
  int checked = 0;
};

// `loss_and_grad` must zero the gradients, run forward+backward and return
// the loss; `loss` only evaluates. Relative error per entry is
// |a - n| / max(|a| + |n|, floor).
GradCheckResult grad_check(const ParameterList& params, const std::function<double()>& loss_and_grad,
                           const std::function<double()>& loss, double epsilon = 1e-5,
                           int samples_per_parameter = 16, std::uint64_t seed = 0, double floor = 1e-7);

// ---- checkpoints --------------------------------------------------------

// <stem>.bin holds raw little-endian doubles; <stem>.json the manifest.
void save_checkpoint(const std::filesystem::path& stem, const ParameterList& params, const Json& metadata);
Json load_checkpoint(const std::filesystem::path& stem, const ParameterList& params);

}  // namespace proxyfair::nn
