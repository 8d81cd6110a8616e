#include "proxyfair/autoencoder.hpp"

#include <cmath>

namespace proxyfair {

AutoencoderModel::AutoencoderModel(Index input_dim, const AutoencoderConfig& config, Rng& rng)
    : encoder("ae.encoder", input_dim, config.latent_dim, rng),
      decoder("ae.decoder", config.latent_dim, input_dim, rng),
      f1(config.encoder_activation),
      f2(config.decoder_activation) {
  if (config.latent_dim <= 0 || config.latent_dim >= input_dim)
    throw Error("autoencoder latent dim " + std::to_string(config.latent_dim) + " must lie in (0, " +
                std::to_string(input_dim) + ")");
}

AutoencoderModel::AutoencoderModel(nn::Dense enc, nn::Dense dec, nn::Activation act1, nn::Activation act2)
    : encoder(std::move(enc)), decoder(std::move(dec)), f1(act1), f2(act2) {
  if (decoder.in_dim() != encoder.out_dim() || decoder.out_dim() != encoder.in_dim())
    throw ShapeError("autoencoder: encoder " + shape_string(encoder.out_dim(), encoder.in_dim()) +
                     " and decoder " + shape_string(decoder.out_dim(), decoder.in_dim()) + " are incompatible");
}

AutoencoderModel::Output AutoencoderModel::forward(const Matrix& x) const {
  Output out;
  out.h = encoder.forward(x, f1);
  out.x_hat = decoder.forward(out.h, f2);
  return out;
}

Matrix AutoencoderModel::encode(const Matrix& x) const {
  if (!trained) warn("autoencoder: extracting embeddings from an untrained model");
  return encoder.forward(x, f1);
}

nn::ParameterList AutoencoderModel::parameters() {
  nn::ParameterList p;
  encoder.collect(p);
  decoder.collect(p);
  if (head) head->collect(p);
  return p;
}

double autoencoder_loss_and_grad(AutoencoderModel& model, const Matrix& x, const Labels* y,
                                 const AutoencoderConfig& config, const RowVector& marginal) {
  const Matrix z1 = model.encoder.affine(x);
  const Matrix h = nn::activate(z1, model.f1);
  const Matrix z2 = model.decoder.affine(h);
  const Matrix x_hat = nn::activate(z2, model.f2);

  Matrix d_xhat;
  double loss = nn::loss_reconstruction(x, x_hat, config.reconstruction, &d_xhat);
  const Matrix d_z2 = nn::activation_backward(z2, x_hat, d_xhat, model.f2);
  Matrix d_h = model.decoder.backward(h, d_z2);

  const double beta = config.separation.beta;
  if (model.head && y && beta > 0.0) {
    SeparationHead::Cache cache;
    const Matrix p = model.head->probabilities(h, &cache);
    loss += beta * nn::loss_kl(p, marginal.replicate(p.rows(), 1));
    const bool joint = config.separation.training == SeparationTraining::joint;
    d_h += model.head->backward_kl(cache, marginal, beta, joint);
    if (!joint) model.head->backward_ce(cache, *y, 1.0);
  }

  const Matrix d_z1 = nn::activation_backward(z1, h, d_h, model.f1);
  model.encoder.backward(x, d_z1);
  return loss;
}

AutoencoderModel train_autoencoder(const Matrix& x, const AutoencoderConfig& config, const Labels* y) {
  config.train.validate();
  if (y && static_cast<Index>(y->size()) != x.rows())
    throw ShapeError("train_autoencoder: " + std::to_string(y->size()) + " labels for " + std::to_string(x.rows()) +
                     " rows");
  Rng init_rng(config.train.seed);
  AutoencoderModel model(x.cols(), config, init_rng);

  const bool separate = y != nullptr && config.separation.beta > 0.0;
  if (!y && config.separation.beta > 0.0) warn("autoencoder: no labels supplied, separation term disabled");
  RowVector marginal;
  if (separate) {
    Rng head_rng(derive_seed(config.train.seed, 1));
    model.head.emplace(config.latent_dim, config.separation.hidden, head_rng);
    marginal = class_marginal(*y);
  }

  nn::Adam adam(model.parameters(), {config.train.learning_rate});
  Rng batch_rng(derive_seed(config.train.seed, 2));
  const auto n = static_cast<std::size_t>(x.rows());

  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    double total = 0.0, recon_total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : nn::shuffled_batches(n, static_cast<std::size_t>(config.train.batch_size), batch_rng)) {
      const Matrix xb = nn::gather_rows(x, batch);
      Labels yb;
      if (separate) {
        yb.reserve(batch.size());
        for (auto i : batch) yb.push_back((*y)[i]);
      }
      adam.zero_grad();
      const double loss = autoencoder_loss_and_grad(model, xb, separate ? &yb : nullptr, config, marginal);
      if (!std::isfinite(loss)) throw DivergenceError(epoch, "autoencoder loss is not finite");
      adam.step();
      total += loss * static_cast<double>(batch.size());
      seen += batch.size();
    }
    // Reconstruction loss of the epoch-end model over the full corpus.
    const auto out = model.forward(x);
    recon_total = nn::loss_reconstruction(x, out.x_hat, config.reconstruction);
    if (!std::isfinite(recon_total)) throw DivergenceError(epoch, "reconstruction loss is not finite");
    model.loss_curve.push_back(total / static_cast<double>(std::max<std::size_t>(1, seen)));
    model.reconstruction_curve.push_back(recon_total);
  }
  model.trained = true;
  return model;
}

}  // namespace proxyfair
