#pragma once

// Downstream income classifiers. Trainers see features, targets and a group
// signal passed in explicitly; the sensitive column itself never reaches them.

#include "proxyfair/dataset.hpp"
#include "proxyfair/nncore.hpp"

#include <optional>

namespace proxyfair {

enum class Algorithm { erm, advdeb, fairmixup };
Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm a);

// dp: demographic parity pairing; eo: pairing within each target class.
enum class FairnessTarget { dp, eo };
FairnessTarget parse_target(const std::string& name);
std::string to_string(FairnessTarget t);

struct TrainSet {
  Matrix X;
  Labels y;
  std::vector<std::int64_t> ids;

  Index rows() const { return X.rows(); }
};

TrainSet make_train_set(const EncodedTable& table, std::span<const std::size_t> rows);

struct MitigationConfig {
  Algorithm algorithm = Algorithm::erm;
  double lambda = 0.5;
  double alpha = 1.0;
  FairnessTarget target = FairnessTarget::dp;
  Index hidden = 64;
  nn::TrainConfig train{20, 256, 1e-3, 7};

  void validate() const;
  Json to_json() const;
};

// d -> hidden (relu) -> 1 logit.
class MlpClassifier {
 public:
  struct Cache {
    Matrix pre, hidden;
    Vector logit;
  };

  MlpClassifier() = default;
  MlpClassifier(Index input_dim, Index hidden_dim, Rng& rng);

  Index input_dim() const { return layer1.in_dim(); }
  Vector logits(const Matrix& x, Cache* cache = nullptr) const;
  // Accumulates parameter gradients for dL/dlogit.
  void backward(const Matrix& x, const Cache& cache, const Vector& grad_logit);
  void collect(nn::ParameterList& out) {
    layer1.collect(out);
    layer2.collect(out);
  }

  nn::Dense layer1, layer2;
};

// Logistic head on the predictor logit: a = c * z (+ e * y) + d.
struct Adversary {
  nn::Parameter weight;  // 1 x 1, or 1 x 2 with the target feature
  nn::Parameter bias;    // 1 x 1

  Adversary() = default;
  Adversary(bool with_target, Rng& rng);
  bool with_target() const { return weight.value.cols() == 2; }
  Vector logits(const Vector& z, std::span<const int> y) const;
  void collect(nn::ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct ClassifierModel {
  MlpClassifier net;
  std::optional<Adversary> adversary;
  MitigationConfig config;
  std::string provenance = "none";  // "true", "proxy" or "none"
  std::vector<double> loss_curve;

  nn::ParameterList parameters() {
    nn::ParameterList p;
    net.collect(p);
    return p;
  }
};

// One optimisation step's rows. Mixup steps list group-0 rows then group-1
// rows (per target class for eo) and carry the interpolation weight t.
struct Step {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> first, second;  // paired halves; empty for plain batches
  std::vector<std::size_t> pair_sizes;     // per pairing block (1 for dp, 2 for eo)
  double t = 0.0;
};
using BatchStream = std::vector<std::vector<Step>>;  // epoch -> steps

BatchStream shuffled_stream(Index n, const nn::TrainConfig& train);
BatchStream mixup_stream(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config);

// t * x0 + (1 - t) * x1
Matrix mix(const Matrix& x0, const Matrix& x1, double t);

// Binary cross-entropy (+ optional fairness term) for one step; gradients accumulate.
double classifier_bce_and_grad(MlpClassifier& net, const Matrix& x, std::span<const int> y);
// |mean over pairs of d f(t x0 + (1 - t) x1) / dt| summed over pairing blocks.
double mixup_penalty(const MlpClassifier& net, const Matrix& x0, const Matrix& x1, double t,
                     std::span<const std::size_t> blocks);
// Adds weight * d penalty / d theta.
void mixup_penalty_grad(MlpClassifier& net, const Matrix& x0, const Matrix& x1, double t,
                        std::span<const std::size_t> blocks, double weight);

struct AdversarialStep {
  double predictor_loss = 0.0;
  double adversary_loss = 0.0;
};
// Predictor loss BCE(z, y) - alpha * BCE(a, s) and adversary loss BCE(a, s)
// from one forward pass; gradients go to the respective parameter lists.
AdversarialStep adversarial_loss_and_grad(MlpClassifier& net, Adversary& adversary, const Matrix& x,
                                          std::span<const int> y, std::span<const int> s, double alpha);

ClassifierModel train_erm(const TrainSet& data, const MitigationConfig& config, const BatchStream* stream = nullptr);
ClassifierModel train_adversarial(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config);
ClassifierModel train_fair_mixup(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config,
                                 const BatchStream* stream = nullptr);
// Dispatches on config.algorithm; `provenance` is recorded on the model.
ClassifierModel train_mitigated(const TrainSet& data, std::span<const int> groups, const MitigationConfig& config,
                                const std::string& provenance);

std::vector<double> predict(const ClassifierModel& model, const Matrix& x);
Labels hard_labels(std::span<const double> scores, double threshold = 0.5);

// `extra` keys are merged into the checkpoint metadata.
void save_classifier(const std::filesystem::path& stem, ClassifierModel& model, const Json& extra = Json::object());
ClassifierModel load_classifier(const std::filesystem::path& stem);

}  // namespace proxyfair
