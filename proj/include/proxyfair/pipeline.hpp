#pragma once

// Stage orchestration behind the command-line tool. Every stage writes its
// artifacts plus a manifest {stage, config, upstream, config_hash}; a stage
// refuses to run on an upstream manifest that is missing or whose recorded
// configuration no longer matches the current RunConfig.

#include "proxyfair/artifacts.hpp"
#include "proxyfair/autoencoder.hpp"
#include "proxyfair/clustering.hpp"
#include "proxyfair/dataset.hpp"
#include "proxyfair/metrics.hpp"
#include "proxyfair/probe.hpp"
#include "proxyfair/transformer.hpp"

#include <filesystem>
#include <functional>

namespace proxyfair {

struct RunConfig {
  // data
  std::string dataset = "adult";  // adult | synthetic
  std::string data_dir = "data/adult";
  Index synthetic_rows = 4000;
  double corr_strength = 1.0;
  double test_frac = 0.2;
  std::uint64_t split_seed = 2023;
  std::string artifact_dir = "artifacts";
  std::uint64_t seed = 7;
  std::int64_t mitigation_seed = -1;  // -1: use seed

  // embed
  std::string embedder = "ae";  // ae | transformer
  double beta = 0.1;
  std::string separation = "confusion";
  Index separation_hidden = 16;
  Index latent = 32;
  std::string encoder_activation = "tanh";
  std::string decoder_activation = "relu";
  std::string reconstruction = "mse";
  int ae_epochs = 200;
  int ae_batch = 32;
  double ae_lr = 1e-3;
  Index tf_width = 48;
  int tf_heads = 6;
  int tf_blocks = 3;
  Index tf_ffn = 128;
  int tf_bins = 10;
  double mask_rate = 0.15;
  std::string pooling = "cls";
  int tf_epochs = 4;
  int tf_batch = 32;
  double tf_lr = 1e-3;

  // cluster
  std::string clusterer = "hierarchical";  // kmeans | hierarchical | birch
  std::string linkage = "ward";
  std::string cluster_scaling = "zscore";  // zscore | none
  int restarts = 10;
  double birch_threshold = 0.5;
  int birch_branching = 50;

  // mitigate
  std::string mitigator = "erm";  // erm | advdeb | fairmixup
  std::string group_signal = "true";  // true | proxy
  double lambda = 0.5;
  double eo_lambda = 2.5;
  double alpha = 1.0;
  std::string target = "dp";
  Index clf_hidden = 64;
  int clf_epochs = 20;
  int clf_batch = 256;
  double clf_lr = 1e-3;

  // probe
  double probe_l2 = 1e-4;

  // reproduce
  std::string table = "table1";
  int seeds = 5;

  std::uint64_t effective_mitigation_seed() const {
    return mitigation_seed < 0 ? seed : static_cast<std::uint64_t>(mitigation_seed);
  }
  Json to_json() const;
  // Flat object with RunConfig keys; unknown keys are rejected.
  void merge_json(const Json& values);
  void validate() const;
};

// Key registry shared by the JSON config loader and the CLI flags.
struct ConfigField {
  std::string key;
  std::string help;
  std::function<Json(const RunConfig&)> get;
  std::function<void(RunConfig&, const Json&)> set;
  std::function<void(RunConfig&, const std::string&)> parse;
};
const std::vector<ConfigField>& config_fields();

// Artifact locations derived from a RunConfig.
struct ArtifactPaths {
  std::filesystem::path root, encoded, embedding, proxy, mitigation;

  static ArtifactPaths of(const RunConfig& config);
};

AutoencoderConfig autoencoder_config(const RunConfig& config);
TransformerConfig transformer_config(const RunConfig& config);
MitigationConfig mitigation_config(const RunConfig& config);

// Stage configuration subsets that enter the hash chain.
Json stage_config(const RunConfig& config, const std::string& stage);

// Loads and checks a stage manifest against the current config, recursively
// through its upstream stages.
Json verify_stage(const RunConfig& config, const std::string& stage);

EncodedTable load_encoded(const RunConfig& config);
CsvMatrix load_embeddings(const RunConfig& config);
ProxyLabels load_proxy(const RunConfig& config);

// Stages. Each returns its manifest.
Json cmd_ingest(const RunConfig& config);
Json cmd_embed(const RunConfig& config);
Json cmd_cluster(const RunConfig& config);
Json cmd_mitigate(const RunConfig& config);
Json cmd_evaluate(const RunConfig& config);
Json cmd_probe(const RunConfig& config);
Json cmd_reproduce(const RunConfig& config);

// Runs a stage only when its manifest is missing or stale.
Json ensure_stage(const RunConfig& config, const std::string& stage);

// Table helpers used by reproduce.
struct GridRun {
  FairnessReport report;
  Json ledger;
};
GridRun run_mitigation(const EncodedTable& table, const SplitIndex& parts, const Labels& groups,
                       const MitigationConfig& config, const std::string& provenance);

}  // namespace proxyfair
