#include "proxyfair/mitigation.hpp"

#include <cmath>

namespace proxyfair {

Algorithm parse_algorithm(const std::string& name) {
  if (name == "erm") return Algorithm::erm;
  if (name == "advdeb") return Algorithm::advdeb;
  if (name == "fairmixup") return Algorithm::fairmixup;
  throw Error("unknown mitigator '" + name + "' (erm, advdeb, fairmixup)");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::erm: return "erm";
    case Algorithm::advdeb: return "advdeb";
    case Algorithm::fairmixup: return "fairmixup";
  }
  return "?";
}

FairnessTarget parse_target(const std::string& name) {
  if (name == "dp") return FairnessTarget::dp;
  if (name == "eo") return FairnessTarget::eo;
  throw Error("unknown fairness target '" + name + "' (dp, eo)");
}

std::string to_string(FairnessTarget t) { return t == FairnessTarget::dp ? "dp" : "eo"; }

TrainSet make_train_set(const EncodedTable& table, std::span<const std::size_t> rows) {
  TrainSet out;
  out.X = nn::gather_rows(table.X, rows);
  out.y.reserve(rows.size());
  out.ids.reserve(rows.size());
  for (auto r : rows) {
    out.y.push_back(table.Y[r]);
    out.ids.push_back(table.ids[r]);
  }
  return out;
}

void MitigationConfig::validate() const {
  if (!(lambda >= 0.0)) throw Error("mitigation: lambda must be >= 0, got " + format_double(lambda));
  if (!(alpha >= 0.0)) throw Error("mitigation: alpha must be >= 0, got " + format_double(alpha));
  if (hidden <= 0) throw Error("mitigation: hidden width must be positive");
  train.validate();
}

Json MitigationConfig::to_json() const {
  return Json{{"algorithm", to_string(algorithm)},
              {"lambda", lambda},
              {"alpha", alpha},
              {"target", to_string(target)},
              {"hidden", hidden},
              {"epochs", train.epochs},
              {"batch_size", train.batch_size},
              {"learning_rate", train.learning_rate},
              {"seed", train.seed}};
}

MlpClassifier::MlpClassifier(Index input_dim, Index hidden_dim, Rng& rng)
    : layer1("clf.hidden", input_dim, hidden_dim, rng), layer2("clf.output", hidden_dim, 1, rng) {}

Vector MlpClassifier::logits(const Matrix& x, Cache* cache) const {
  if (x.cols() != input_dim())
    throw ShapeError("classifier expects " + std::to_string(input_dim()) + " features, got " +
                     std::to_string(x.cols()));
  Matrix pre = layer1.affine(x);
  Matrix hidden = pre.cwiseMax(0.0);
  Vector z = layer2.affine(hidden).col(0);
  if (cache) {
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->logit = z;
  }
  return z;
}

void MlpClassifier::backward(const Matrix& x, const Cache& cache, const Vector& grad_logit) {
  const Matrix d_hidden = layer2.backward(cache.hidden, grad_logit);
  const Matrix d_pre = (cache.pre.array() > 0.0).select(d_hidden, 0.0);
  layer1.backward(x, d_pre);
}

Adversary::Adversary(bool with_target, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Matrix w(1, with_target ? 2 : 1);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  weight = nn::Parameter("adv.weight", std::move(w));
  bias = nn::Parameter("adv.bias", Matrix::Zero(1, 1));
}

Vector Adversary::logits(const Vector& z, std::span<const int> y) const {
  Vector a = z * weight.value(0, 0);
  if (with_target())
    for (Index i = 0; i < a.size(); ++i) a(i) += weight.value(0, 1) * y[static_cast<std::size_t>(i)];
  return a.array() + bias.value(0, 0);
}

// ---- batch streams ------------------------------------------------------

BatchStream shuffled_stream(Index n, const nn::TrainConfig& train) {
  Rng rng(derive_seed(train.seed, 2));
  BatchStream stream(static_cast<std::size_t>(train.epochs));
  for (auto& epoch : stream)
    for (auto& rows : nn::shuffled_batches(static_cast<std::size_t>(n), static_cast<std::size_t>(train.batch_size), rng))
      epoch.push_back(Step{std::move(rows), {}, {}, {}, 0.0});
  return stream;
}

namespace {

void check_groups(const TrainSet& data, std::span<const int> groups) {
  if (static_cast<Index>(groups.size()) != data.rows())
    throw ShapeError("group labels: " + std::to_string(groups.size()) + " for " + std::to_string(data.rows()) +
                     " rows");
  for (int g : groups)
    if (g != 0 && g != 1) throw Error("group labels must be 0 or 1, saw " + std::to_string(g));
}

}  // namespace

BatchStream mixup_stream(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config) {
  check_groups(data, groups);
  const bool eo = config.target == FairnessTarget::eo;
  // Pools indexed by pairing block then group.
  const int blocks = eo ? 2 : 1;
  std::vector<std::array<std::vector<std::size_t>, 2>> pools(static_cast<std::size_t>(blocks));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int block = eo ? data.y[i] : 0;
    pools[static_cast<std::size_t>(block)][static_cast<std::size_t>(groups[i])].push_back(i);
  }
  for (int b = 0; b < blocks; ++b)
    for (int g = 0; g < 2; ++g)
      if (pools[static_cast<std::size_t>(b)][static_cast<std::size_t>(g)].empty())
        throw Error("fair mixup: group " + std::to_string(g) + " is absent from the training set" +
                    (eo ? " for target class " + std::to_string(b) : std::string()));

  const auto per_block = static_cast<std::size_t>(std::max(1, config.train.batch_size / (2 * blocks)));
  const auto steps = static_cast<std::size_t>((data.rows() + config.train.batch_size - 1) / config.train.batch_size);
  Rng rng(derive_seed(config.train.seed, 3));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BatchStream stream(static_cast<std::size_t>(config.train.epochs));
  for (auto& epoch : stream) {
    epoch.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
      Step step;
      for (const auto& pool : pools) {
        for (int g = 0; g < 2; ++g) {
          const auto& members = pool[static_cast<std::size_t>(g)];
          std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
          auto& half = g == 0 ? step.first : step.second;
          for (std::size_t i = 0; i < per_block; ++i) half.push_back(members[pick(rng)]);
        }
        step.pair_sizes.push_back(per_block);
      }
      step.t = unit(rng);
      step.rows = step.first;
      step.rows.insert(step.rows.end(), step.second.begin(), step.second.end());
      epoch.push_back(std::move(step));
    }
  }
  return stream;
}

Matrix mix(const Matrix& x0, const Matrix& x1, double t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols())
    throw ShapeError("mix: " + shape_string(x0.rows(), x0.cols()) + " vs " + shape_string(x1.rows(), x1.cols()));
  return t * x0 + (1.0 - t) * x1;
}

// ---- losses -------------------------------------------------------------

double classifier_bce_and_grad(MlpClassifier& net, const Matrix& x, std::span<const int> y) {
  MlpClassifier::Cache cache;
  const Vector z = net.logits(x, &cache);
  Vector g;
  const double loss = nn::bce_with_logits(z, y, &g);
  net.backward(x, cache, g);
  return loss;
}

namespace {

struct PenaltyTerms {
  MlpClassifier::Cache cache;
  Matrix mixed, direction, hidden_dir;
  Vector slope;  // d logit / dt per pair
  Vector g;      // d f / dt per pair
};

PenaltyTerms penalty_terms(const MlpClassifier& net, const Matrix& x0, const Matrix& x1, double t) {
  PenaltyTerms p;
  p.mixed = mix(x0, x1, t);
  p.direction = x0 - x1;
  net.logits(p.mixed, &p.cache);
  p.hidden_dir = p.direction * net.layer1.weight.value.transpose();
  const RowVector w2 = net.layer2.weight.value.row(0);
  const Index n = x0.rows();
  p.slope.resize(n);
  p.g.resize(n);
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index k = 0; k < w2.size(); ++k)
      if (p.cache.pre(i, k) > 0.0) s += w2(k) * p.hidden_dir(i, k);
    p.slope(i) = s;
    const double f = nn::sigmoid(p.cache.logit(i));
    p.g(i) = f * (1.0 - f) * s;
  }
  return p;
}

void check_blocks(std::span<const std::size_t> blocks, Index rows) {
  std::size_t total = 0;
  for (auto b : blocks) {
    if (b == 0) throw Error("mixup: empty pairing block");
    total += b;
  }
  if (static_cast<Index>(total) != rows) throw ShapeError("mixup: pairing blocks do not cover the batch");
}

}  // namespace

double mixup_penalty(const MlpClassifier& net, const Matrix& x0, const Matrix& x1, double t,
                     std::span<const std::size_t> blocks) {
  check_blocks(blocks, x0.rows());
  const PenaltyTerms p = penalty_terms(net, x0, x1, t);
  double total = 0.0;
  Index start = 0;
  for (auto b : blocks) {
    const auto len = static_cast<Index>(b);
    total += std::abs(p.g.segment(start, len).mean());
    start += len;
  }
  return total;
}

void mixup_penalty_grad(MlpClassifier& net, const Matrix& x0, const Matrix& x1, double t,
                        std::span<const std::size_t> blocks, double weight) {
  check_blocks(blocks, x0.rows());
  const PenaltyTerms p = penalty_terms(net, x0, x1, t);
  const Index n = x0.rows();
  // g_i = sigma'(z_i) * slope_i; the relu mask is locally constant.
  Vector c(n), e(n);
  Index start = 0;
  for (auto b : blocks) {
    const auto len = static_cast<Index>(b);
    const double mean = p.g.segment(start, len).mean();
    const double sign = static_cast<double>((mean > 0.0) - (mean < 0.0));
    for (Index i = start; i < start + len; ++i) {
      const double f = nn::sigmoid(p.cache.logit(i));
      const double d1 = f * (1.0 - f);
      const double d2 = d1 * (1.0 - 2.0 * f);
      const double scale = weight * sign / static_cast<double>(len);
      c(i) = scale * d2 * p.slope(i);
      e(i) = scale * d1;
    }
    start += len;
  }
  // Through z_i at the mixed point.
  net.backward(p.mixed, p.cache, c);
  // Through slope_i = sum_k w2_k m_ik (W1 v_i)_k.
  const RowVector w2 = net.layer2.weight.value.row(0);
  const Matrix mask = (p.cache.pre.array() > 0.0).cast<double>();
  net.layer2.weight.grad.row(0) += e.transpose() * mask.cwiseProduct(p.hidden_dir);
  const Matrix d_hidden = (mask.array().rowwise() * w2.array()).colwise() * e.array();
  net.layer1.weight.grad.noalias() += d_hidden.transpose() * p.direction;
}

AdversarialStep adversarial_loss_and_grad(MlpClassifier& net, Adversary& adversary, const Matrix& x,
                                          std::span<const int> y, std::span<const int> s, double alpha) {
  MlpClassifier::Cache cache;
  const Vector z = net.logits(x, &cache);
  Vector g;
  AdversarialStep out;
  out.predictor_loss = nn::bce_with_logits(z, y, &g);
  const Vector a = adversary.logits(z, y);
  Vector ga;
  out.adversary_loss = nn::bce_with_logits(a, s, &ga);
  if (alpha != 0.0) {
    out.predictor_loss -= alpha * out.adversary_loss;
    g -= alpha * adversary.weight.value(0, 0) * ga;
  }
  net.backward(x, cache, g);

  adversary.weight.grad(0, 0) += ga.dot(z);
  if (adversary.with_target()) {
    double gy = 0.0;
    for (Index i = 0; i < ga.size(); ++i) gy += ga(i) * y[static_cast<std::size_t>(i)];
    adversary.weight.grad(0, 1) += gy;
  }
  adversary.bias.grad(0, 0) += ga.sum();
  return out;
}

// ---- trainers -----------------------------------------------------------

namespace {

ClassifierModel init_model(const TrainSet& data, const MitigationConfig& config) {
  config.validate();
  if (data.rows() == 0) throw Error("mitigation: empty training set");
  if (static_cast<Index>(data.y.size()) != data.rows()) throw ShapeError("mitigation: target length mismatch");
  ClassifierModel model;
  Rng rng(config.train.seed);
  model.net = MlpClassifier(data.X.cols(), config.hidden, rng);
  model.config = config;
  return model;
}

Labels gather(std::span<const int> v, std::span<const std::size_t> rows) {
  Labels out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(v[r]);
  return out;
}

void check_finite(double loss, int epoch, const char* what) {
  if (!std::isfinite(loss)) throw DivergenceError(epoch, std::string(what) + " loss is not finite");
}

}  // namespace

ClassifierModel train_erm(const TrainSet& data, const MitigationConfig& config, const BatchStream* stream) {
  ClassifierModel model = init_model(data, config);
  model.config.algorithm = Algorithm::erm;
  const BatchStream own = stream ? BatchStream{} : shuffled_stream(data.rows(), config.train);
  const BatchStream& batches = stream ? *stream : own;
  nn::Adam adam(model.parameters(), {config.train.learning_rate});
  for (std::size_t epoch = 0; epoch < batches.size(); ++epoch) {
    double total = 0.0;
    for (const auto& step : batches[epoch]) {
      adam.zero_grad();
      const double loss =
          classifier_bce_and_grad(model.net, nn::gather_rows(data.X, step.rows), gather(data.y, step.rows));
      check_finite(loss, static_cast<int>(epoch), "erm");
      adam.step();
      total += loss;
    }
    model.loss_curve.push_back(total / static_cast<double>(std::max<std::size_t>(1, batches[epoch].size())));
  }
  return model;
}

ClassifierModel train_adversarial(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config) {
  check_groups(data, groups);
  ClassifierModel model = init_model(data, config);
  model.config.algorithm = Algorithm::advdeb;
  Rng adv_rng(derive_seed(config.train.seed, 4));
  model.adversary.emplace(config.target == FairnessTarget::eo, adv_rng);
  nn::Adam predictor(model.parameters(), {config.train.learning_rate});
  nn::ParameterList adv_params;
  model.adversary->collect(adv_params);
  nn::Adam adversary(adv_params, {config.train.learning_rate});

  const BatchStream batches = shuffled_stream(data.rows(), config.train);
  for (std::size_t epoch = 0; epoch < batches.size(); ++epoch) {
    double total = 0.0;
    for (const auto& step : batches[epoch]) {
      predictor.zero_grad();
      adversary.zero_grad();
      const auto result = adversarial_loss_and_grad(model.net, *model.adversary, nn::gather_rows(data.X, step.rows),
                                                    gather(data.y, step.rows), gather(groups, step.rows),
                                                    config.alpha);
      check_finite(result.predictor_loss, static_cast<int>(epoch), "predictor");
      check_finite(result.adversary_loss, static_cast<int>(epoch), "adversary");
      predictor.step();
      adversary.step();
      total += result.predictor_loss;
    }
    model.loss_curve.push_back(total / static_cast<double>(std::max<std::size_t>(1, batches[epoch].size())));
  }
  return model;
}

ClassifierModel train_fair_mixup(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config,
                                 const BatchStream* stream) {
  ClassifierModel model = init_model(data, config);
  model.config.algorithm = Algorithm::fairmixup;
  const BatchStream own = stream ? BatchStream{} : mixup_stream(data, groups, config);
  const BatchStream& batches = stream ? *stream : own;
  nn::Adam adam(model.parameters(), {config.train.learning_rate});
  for (std::size_t epoch = 0; epoch < batches.size(); ++epoch) {
    double total = 0.0;
    for (const auto& step : batches[epoch]) {
      if (step.first.size() != step.second.size() || step.first.empty())
        throw Error("fair mixup: step without paired group batches");
      adam.zero_grad();
      double loss =
          classifier_bce_and_grad(model.net, nn::gather_rows(data.X, step.rows), gather(data.y, step.rows));
      if (config.lambda > 0.0) {
        const Matrix x0 = nn::gather_rows(data.X, step.first);
        const Matrix x1 = nn::gather_rows(data.X, step.second);
        loss += config.lambda * mixup_penalty(model.net, x0, x1, step.t, step.pair_sizes);
        mixup_penalty_grad(model.net, x0, x1, step.t, step.pair_sizes, config.lambda);
      }
      check_finite(loss, static_cast<int>(epoch), "fair mixup");
      adam.step();
      total += loss;
    }
    model.loss_curve.push_back(total / static_cast<double>(std::max<std::size_t>(1, batches[epoch].size())));
  }
  return model;
}

ClassifierModel train_mitigated(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config,
                                const std::string& provenance) {
  ClassifierModel model;
  switch (config.algorithm) {
    case Algorithm::erm: model = train_erm(data, config); break;
    case Algorithm::advdeb: model = train_adversarial(data, groups, config); break;
    case Algorithm::fairmixup: model = train_fair_mixup(data, groups, config); break;
  }
  model.provenance = config.algorithm == Algorithm::erm ? "none" : provenance;
  return model;
}

std::vector<double> predict(const ClassifierModel& model, const Matrix& x) {
  const Vector z = model.net.logits(x);
  std::vector<double> scores(static_cast<std::size_t>(z.size()));
  for (Index i = 0; i < z.size(); ++i) scores[static_cast<std::size_t>(i)] = nn::sigmoid(z(i));
  return scores;
}

Labels hard_labels(std::span<const double> scores, double threshold) {
  Labels out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(s >= threshold ? 1 : 0);
  return out;
}

void save_classifier(const std::filesystem::path& stem, ClassifierModel& model, const Json& extra) {
  Json meta = extra;
  meta.update(model.config.to_json());
  meta["provenance"] = model.provenance;
  meta["input_dim"] = model.net.input_dim();
  nn::save_checkpoint(stem, model.parameters(), meta);
}

ClassifierModel load_classifier(const std::filesystem::path& stem) {
  const Json manifest = read_json(std::filesystem::path(stem).concat(".json"));
  const Json& meta = manifest.at("metadata");
  ClassifierModel model;
  try {
    model.config.algorithm = parse_algorithm(meta.at("algorithm").get<std::string>());
    model.config.lambda = meta.at("lambda").get<double>();
    model.config.alpha = meta.at("alpha").get<double>();
    model.config.target = parse_target(meta.at("target").get<std::string>());
    model.config.hidden = meta.at("hidden").get<Index>();
    model.config.train = {meta.at("epochs").get<int>(), meta.at("batch_size").get<int>(),
                          meta.at("learning_rate").get<double>(), meta.at("seed").get<std::uint64_t>()};
    model.provenance = meta.at("provenance").get<std::string>();
    Rng rng(0);
    model.net = MlpClassifier(meta.at("input_dim").get<Index>(), model.config.hidden, rng);
  } catch (const Json::exception& e) {
    throw Error("classifier checkpoint " + stem.string() + ": " + e.what());
  }
  nn::load_checkpoint(stem, model.parameters());
  return model;
}

}  // namespace proxyfair
