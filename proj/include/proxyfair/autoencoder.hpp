#pragma once

#include "proxyfair/nncore.hpp"
#include "proxyfair/separation.hpp"

#include <optional>

namespace proxyfair {

struct AutoencoderConfig {
  Index latent_dim = 32;
  nn::Activation encoder_activation = nn::Activation::tanh;  // f1: input -> latent
  nn::Activation decoder_activation = nn::Activation::relu;  // f2: latent -> reconstruction
  nn::ReconMode reconstruction = nn::ReconMode::mse;
  nn::TrainConfig train{200, 32, 1e-3, 7};
  SeparationConfig separation;
};

// One hidden layer: h = f1(W_enc x + b_enc), x_hat = f2(W_dec h + b_dec).
class AutoencoderModel {
 public:
  struct Output {
    Matrix h;
    Matrix x_hat;
  };

  AutoencoderModel() = default;
  AutoencoderModel(Index input_dim, const AutoencoderConfig& config, Rng& rng);
  AutoencoderModel(nn::Dense encoder, nn::Dense decoder, nn::Activation f1, nn::Activation f2);

  Index input_dim() const { return encoder.in_dim(); }
  Index latent_dim() const { return encoder.out_dim(); }

  Output forward(const Matrix& x) const;
  Matrix encode(const Matrix& x) const;

  nn::ParameterList parameters();

  nn::Dense encoder;
  nn::Dense decoder;
  nn::Activation f1 = nn::Activation::tanh;
  nn::Activation f2 = nn::Activation::relu;
  std::optional<SeparationHead> head;
  std::vector<double> loss_curve;
  std::vector<double> reconstruction_curve;
  bool trained = false;
};

inline AutoencoderModel::Output ae_forward(const AutoencoderModel& model, const Matrix& x) { return model.forward(x); }

// Loss of one batch; accumulates gradients into the model's parameters
// (encoder, decoder and, depending on the mode, the separation head).
double autoencoder_loss_and_grad(AutoencoderModel& model, const Matrix& x, const Labels* y,
                                 const AutoencoderConfig& config, const RowVector& marginal);

// Minimises reconstruction loss (+ beta * separation term when y is given
// and beta > 0). Throws DivergenceError on a non-finite loss.
AutoencoderModel train_autoencoder(const Matrix& x, const AutoencoderConfig& config, const Labels* y = nullptr);

}  // namespace proxyfair
