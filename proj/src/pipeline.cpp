#include "proxyfair/pipeline.hpp"

#include <charconv>
#include <map>

namespace proxyfair {

namespace fs = std::filesystem;

// ---- configuration ------------------------------------------------------

namespace {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw Error("option --" + key + ": cannot parse '" + text + "'");
    return value;
  }
}

template <class T>
ConfigField field(const std::string& key, T RunConfig::*member, const std::string& help) {
  ConfigField f;
  f.key = key;
  f.help = help;
  f.get = [member](const RunConfig& c) { return Json(c.*member); };
  f.set = [member, key](RunConfig& c, const Json& v) {
    try {
      c.*member = v.get<T>();
    } catch (const Json::exception&) {
      throw Error("config key '" + key + "' has the wrong type: " + v.dump());
    }
  };
  f.parse = [member, key](RunConfig& c, const std::string& text) { c.*member = parse_value<T>(key, text); };
  return f;
}

template <class... Allowed>
void check_choice(const std::string& key, const std::string& value, Allowed... allowed) {
  if (((value == allowed) || ...)) return;
  std::string list;
  ((list += std::string(list.empty() ? "" : ", ") + allowed), ...);
  throw Error(key + " must be one of " + list + ", got '" + value + "'");
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      field("dataset", &RunConfig::dataset, "adult or synthetic"),
      field("data_dir", &RunConfig::data_dir, "directory with adult.data and adult.test"),
      field("synthetic_rows", &RunConfig::synthetic_rows, "rows of the synthetic dataset"),
      field("corr_strength", &RunConfig::corr_strength, "synthetic group/feature correlation in [0, 1]"),
      field("test_frac", &RunConfig::test_frac, "held-out fraction"),
      field("split_seed", &RunConfig::split_seed, "train/test split seed"),
      field("artifact_dir", &RunConfig::artifact_dir, "artifact root"),
      field("seed", &RunConfig::seed, "global seed (PROXYFAIR_SEED overrides)"),
      field("mitigation_seed", &RunConfig::mitigation_seed, "classifier seed, -1 uses seed"),
      field("embedder", &RunConfig::embedder, "ae or transformer"),
      field("beta", &RunConfig::beta, "separation term weight"),
      field("separation", &RunConfig::separation, "confusion or joint"),
      field("separation_hidden", &RunConfig::separation_hidden, "separation head width"),
      field("latent", &RunConfig::latent, "autoencoder latent width"),
      field("encoder_activation", &RunConfig::encoder_activation, "autoencoder f1"),
      field("decoder_activation", &RunConfig::decoder_activation, "autoencoder f2"),
      field("reconstruction", &RunConfig::reconstruction, "mse or mae"),
      field("ae_epochs", &RunConfig::ae_epochs, "autoencoder epochs"),
      field("ae_batch", &RunConfig::ae_batch, "autoencoder batch size"),
      field("ae_lr", &RunConfig::ae_lr, "autoencoder learning rate"),
      field("tf_width", &RunConfig::tf_width, "transformer model width"),
      field("tf_heads", &RunConfig::tf_heads, "attention heads"),
      field("tf_blocks", &RunConfig::tf_blocks, "encoder blocks"),
      field("tf_ffn", &RunConfig::tf_ffn, "feed-forward width"),
      field("tf_bins", &RunConfig::tf_bins, "quantile bins per continuous field"),
      field("mask_rate", &RunConfig::mask_rate, "masked field fraction"),
      field("pooling", &RunConfig::pooling, "cls or mean"),
      field("tf_epochs", &RunConfig::tf_epochs, "transformer epochs"),
      field("tf_batch", &RunConfig::tf_batch, "transformer batch size"),
      field("tf_lr", &RunConfig::tf_lr, "transformer learning rate"),
      field("clusterer", &RunConfig::clusterer, "kmeans, hierarchical or birch"),
      field("linkage", &RunConfig::linkage, "ward, average or complete"),
      field("cluster_scaling", &RunConfig::cluster_scaling, "zscore or none, applied to embeddings before clustering"),
      field("restarts", &RunConfig::restarts, "k-means restarts"),
      field("birch_threshold", &RunConfig::birch_threshold, "BIRCH subcluster radius"),
      field("birch_branching", &RunConfig::birch_branching, "BIRCH branching factor"),
      field("mitigator", &RunConfig::mitigator, "erm, advdeb or fairmixup"),
      field("group_signal", &RunConfig::group_signal, "true or proxy"),
      field("lambda", &RunConfig::lambda, "fair mixup weight"),
      field("eo_lambda", &RunConfig::eo_lambda, "fair mixup weight of the eo run in table1"),
      field("alpha", &RunConfig::alpha, "adversary weight"),
      field("target", &RunConfig::target, "dp or eo"),
      field("clf_hidden", &RunConfig::clf_hidden, "classifier hidden width"),
      field("clf_epochs", &RunConfig::clf_epochs, "classifier epochs"),
      field("clf_batch", &RunConfig::clf_batch, "classifier batch size"),
      field("clf_lr", &RunConfig::clf_lr, "classifier learning rate"),
      field("probe_l2", &RunConfig::probe_l2, "probe L2 weight"),
      field("table", &RunConfig::table, "table1 or table2"),
      field("seeds", &RunConfig::seeds, "seeds per reproduced cell"),
  };
  return fields;
}

Json RunConfig::to_json() const {
  Json out = Json::object();
  for (const auto& f : config_fields()) out[f.key] = f.get(*this);
  return out;
}

void RunConfig::merge_json(const Json& values) {
  if (!values.is_object()) throw Error("config: expected a JSON object of key/value pairs");
  const auto& fields = config_fields();
  for (const auto& [key, value] : values.items()) {
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.key == key; });
    if (it == fields.end()) throw Error("config: unknown key '" + key + "'");
    it->set(*this, value);
  }
}

void RunConfig::validate() const {
  check_choice("dataset", dataset, "adult", "synthetic");
  check_choice("embedder", embedder, "ae", "transformer");
  check_choice("clusterer", clusterer, "kmeans", "hierarchical", "birch");
  check_choice("mitigator", mitigator, "erm", "advdeb", "fairmixup");
  check_choice("group_signal", group_signal, "true", "proxy");
  check_choice("table", table, "table1", "table2");
  check_choice("cluster_scaling", cluster_scaling, "zscore", "none");
  parse_separation_training(separation);
  parse_linkage(linkage);
  parse_pooling(pooling);
  parse_target(target);
  nn::parse_activation(encoder_activation);
  nn::parse_activation(decoder_activation);
  nn::parse_recon_mode(reconstruction);
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw Error("test_frac must lie in (0, 1)");
  if (!(corr_strength >= 0.0 && corr_strength <= 1.0)) throw Error("corr_strength must lie in [0, 1]");
  if (synthetic_rows < 2) throw Error("synthetic_rows must be at least 2");
  if (seeds < 1) throw Error("seeds must be at least 1");
  if (beta < 0.0) throw Error("beta must be >= 0");
  if (lambda < 0.0 || eo_lambda < 0.0) throw Error("lambda must be >= 0");
  if (alpha < 0.0) throw Error("alpha must be >= 0");
  if (restarts < 1) throw Error("restarts must be at least 1");
  if (!(birch_threshold > 0.0)) throw Error("birch_threshold must be positive");
  if (birch_branching < 2) throw Error("birch_branching must be at least 2");
}

AutoencoderConfig autoencoder_config(const RunConfig& c) {
  AutoencoderConfig a;
  a.latent_dim = c.latent;
  a.encoder_activation = nn::parse_activation(c.encoder_activation);
  a.decoder_activation = nn::parse_activation(c.decoder_activation);
  a.reconstruction = nn::parse_recon_mode(c.reconstruction);
  a.train = {c.ae_epochs, c.ae_batch, c.ae_lr, c.seed};
  a.separation = {c.beta, c.separation_hidden, parse_separation_training(c.separation)};
  return a;
}

TransformerConfig transformer_config(const RunConfig& c) {
  TransformerConfig t;
  t.model_width = c.tf_width;
  t.heads = c.tf_heads;
  t.blocks = c.tf_blocks;
  t.ffn_hidden = c.tf_ffn;
  t.bins = c.tf_bins;
  t.mask_rate = c.mask_rate;
  t.pooling = parse_pooling(c.pooling);
  t.train = {c.tf_epochs, c.tf_batch, c.tf_lr, c.seed};
  t.separation = {c.beta, c.separation_hidden, parse_separation_training(c.separation)};
  return t;
}

MitigationConfig mitigation_config(const RunConfig& c) {
  MitigationConfig m;
  m.algorithm = parse_algorithm(c.mitigator);
  m.lambda = c.lambda;
  m.alpha = c.alpha;
  m.target = parse_target(c.target);
  m.hidden = c.clf_hidden;
  m.train = {c.clf_epochs, c.clf_batch, c.clf_lr, c.effective_mitigation_seed()};
  return m;
}

ArtifactPaths ArtifactPaths::of(const RunConfig& c) {
  ArtifactPaths p;
  p.root = c.artifact_dir;
  p.encoded = p.root / "encoded";
  p.embedding = p.root / c.embedder;
  p.proxy = p.embedding / c.clusterer;
  if (c.mitigator == "erm")
    p.mitigation = p.root / "erm";
  else
    p.mitigation = (c.group_signal == "proxy" ? p.proxy : p.root / "true") / c.mitigator;
  return p;
}

// ---- manifests ----------------------------------------------------------

Json stage_config(const RunConfig& c, const std::string& stage) {
  const Json all = c.to_json();
  auto pick = [&](std::initializer_list<const char*> keys) {
    Json out = Json::object();
    for (const char* k : keys) out[k] = all.at(k);
    return out;
  };
  if (stage == "ingest") {
    Json out = pick({"dataset", "test_frac", "split_seed"});
    if (c.dataset == "synthetic") out.update(pick({"synthetic_rows", "corr_strength", "seed"}));
    return out;
  }
  if (stage == "embed") {
    Json out = pick({"embedder", "seed", "beta", "separation", "separation_hidden"});
    if (c.embedder == "ae")
      out.update(pick({"latent", "encoder_activation", "decoder_activation", "reconstruction", "ae_epochs", "ae_batch",
                       "ae_lr"}));
    else
      out.update(pick({"tf_width", "tf_heads", "tf_blocks", "tf_ffn", "tf_bins", "mask_rate", "pooling", "tf_epochs",
                       "tf_batch", "tf_lr"}));
    return out;
  }
  if (stage == "cluster") {
    Json out = pick({"clusterer", "seed", "cluster_scaling"});
    if (c.clusterer == "kmeans") out.update(pick({"restarts"}));
    if (c.clusterer == "hierarchical") out.update(pick({"linkage"}));
    if (c.clusterer == "birch") out.update(pick({"birch_threshold", "birch_branching"}));
    return out;
  }
  if (stage == "mitigate") {
    Json out = pick({"mitigator", "clf_hidden", "clf_epochs", "clf_batch", "clf_lr"});
    out["mitigation_seed"] = c.effective_mitigation_seed();
    if (c.mitigator != "erm") out.update(pick({"group_signal", "target"}));
    if (c.mitigator == "advdeb") out.update(pick({"alpha"}));
    if (c.mitigator == "fairmixup") out.update(pick({"lambda"}));
    return out;
  }
  if (stage == "probe") return pick({"probe_l2"});
  throw Error("unknown stage '" + stage + "'");
}

namespace {

std::vector<std::string> upstream_of(const RunConfig& c, const std::string& stage) {
  if (stage == "embed") return {"ingest"};
  if (stage == "cluster") return {"embed"};
  if (stage == "mitigate") {
    if (c.mitigator != "erm" && c.group_signal == "proxy") return {"ingest", "cluster"};
    return {"ingest"};
  }
  if (stage == "probe") return {"cluster"};
  return {};
}

fs::path manifest_path(const RunConfig& c, const std::string& stage) {
  const auto p = ArtifactPaths::of(c);
  if (stage == "ingest") return p.encoded / "manifest.json";
  if (stage == "embed") return p.embedding / "manifest.json";
  if (stage == "cluster") return p.proxy / "manifest.json";
  if (stage == "mitigate") return p.mitigation / "classifier.json";
  if (stage == "probe") return p.proxy / "similarity.json";
  throw Error("unknown stage '" + stage + "'");
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a(read_file(path))); }

Json chain_hash_input(const std::string& stage, const Json& config, const Json& upstream) {
  return Json{{"stage", stage}, {"config", config}, {"upstream", upstream}};
}

// Manifest skeleton for `stage` with upstream hashes resolved from disk.
Json begin_manifest(const RunConfig& c, const std::string& stage) {
  Json upstream = Json::object();
  for (const auto& u : upstream_of(c, stage)) upstream[u] = verify_stage(c, u).at("config_hash");
  const Json config = stage_config(c, stage);
  return Json{{"stage", stage},
              {"config", config},
              {"upstream", upstream},
              {"config_hash", config_hash(chain_hash_input(stage, config, upstream))}};
}

void write_payload(Json& manifest, const fs::path& path, const std::string& contents) {
  atomic_write(path, contents);
  manifest["payload"][path.filename().string()] = hex64(fnv1a(contents));
}

Json read_stage_manifest(const fs::path& path, const std::string& stage) {
  Json m = read_json(path);
  if (stage == "mitigate") m = m.at("metadata");
  return m;
}

}  // namespace

Json verify_stage(const RunConfig& c, const std::string& stage) {
  const fs::path path = manifest_path(c, stage);
  if (!fs::exists(path))
    throw ArtifactError(stage, "missing " + path.string() + "; run `proxyfair " + stage + "` first");
  Json m;
  try {
    m = read_stage_manifest(path, stage);
  } catch (const std::exception& e) {
    throw ArtifactError(stage, "unreadable manifest " + path.string() + ": " + e.what());
  }
  if (!m.contains("config") || !m.contains("upstream") || !m.contains("config_hash"))
    throw ArtifactError(stage, "manifest " + path.string() + " lacks provenance fields");
  if (m.at("config") != stage_config(c, stage))
    throw StaleArtifactError(stage, "artifact in " + path.parent_path().string() +
                                        " was built with a different configuration; rerun `proxyfair " + stage + "`");
  for (const auto& u : upstream_of(c, stage)) {
    const Json um = verify_stage(c, u);
    if (!m.at("upstream").contains(u) || m.at("upstream").at(u) != um.at("config_hash"))
      throw StaleArtifactError(stage, "upstream stage '" + u + "' changed since this artifact was built; rerun `proxyfair " +
                                          stage + "`");
  }
  if (m.at("config_hash") != config_hash(chain_hash_input(stage, m.at("config"), m.at("upstream"))))
    throw ArtifactError(stage, "manifest " + path.string() + " has an inconsistent config hash");
  if (m.contains("payload")) {
    for (const auto& [name, hash] : m.at("payload").items()) {
      const fs::path file = path.parent_path() / name;
      if (!fs::exists(file)) throw ArtifactError(stage, "missing payload " + file.string());
      if (file_hash(file) != hash.get<std::string>())
        throw StaleArtifactError(stage, "payload " + file.string() + " does not match its manifest");
    }
  }
  return m;
}

Json ensure_stage(const RunConfig& c, const std::string& stage) {
  try {
    return verify_stage(c, stage);
  } catch (const ArtifactError& e) {
    if (e.stage() != stage) throw;
  }
  if (stage == "ingest") return cmd_ingest(c);
  if (stage == "embed") {
    ensure_stage(c, "ingest");
    return cmd_embed(c);
  }
  if (stage == "cluster") {
    ensure_stage(c, "embed");
    return cmd_cluster(c);
  }
  if (stage == "mitigate") return cmd_mitigate(c);
  if (stage == "probe") {
    ensure_stage(c, "cluster");
    return cmd_probe(c);
  }
  throw Error("unknown stage '" + stage + "'");
}

// ---- encoded table I/O --------------------------------------------------

namespace {

const char* kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::continuous: return "continuous";
    case ColumnKind::sensitive: return "sensitive";
    case ColumnKind::target: return "target";
  }
  return "?";
}

ColumnKind kind_from(const std::string& name) {
  if (name == "categorical") return ColumnKind::categorical;
  if (name == "continuous") return ColumnKind::continuous;
  if (name == "sensitive") return ColumnKind::sensitive;
  if (name == "target") return ColumnKind::target;
  throw SchemaError("unknown column kind '" + name + "'");
}

Json schema_json(const FeatureSchema& schema) {
  Json cols = Json::array();
  for (const auto& c : schema.columns())
    cols.push_back(
        {{"name", c.name}, {"kind", kind_name(c.kind)}, {"levels", c.levels}, {"mean", c.mean}, {"stddev", c.stddev}});
  return cols;
}

FeatureSchema schema_from(const Json& cols) {
  std::vector<ColumnSpec> specs;
  for (const auto& c : cols) {
    ColumnSpec s;
    s.name = c.at("name").get<std::string>();
    s.kind = kind_from(c.at("kind").get<std::string>());
    s.levels = c.at("levels").get<std::vector<std::string>>();
    s.mean = c.at("mean").get<double>();
    s.stddev = c.at("stddev").get<double>();
    specs.push_back(std::move(s));
  }
  return FeatureSchema(std::move(specs));
}

Labels column_labels(const Matrix& m, Index col) {
  Labels out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(m(i, col));
  return out;
}

Labels pick(const Labels& v, std::span<const std::size_t> rows) {
  Labels out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(v[r]);
  return out;
}

void check_ids(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b, const std::string& stage) {
  if (a != b) throw StaleArtifactError(stage, "row ids do not match the encoded table; rerun `proxyfair " + stage + "`");
}

std::string embedder_name(const std::string& e) { return e == "ae" ? "AutoEncoder" : "Transformer"; }
std::string clusterer_name(const std::string& c) {
  if (c == "kmeans") return "K-Means";
  if (c == "hierarchical") return "Hierarchical";
  return "BIRCH";
}

}  // namespace

EncodedTable load_encoded(const RunConfig& c) {
  const Json m = verify_stage(c, "ingest");
  const auto p = ArtifactPaths::of(c);
  const CsvMatrix csv = csv_to_matrix(read_file(p.encoded / "encoded.csv"));
  EncodedTable t;
  t.schema = schema_from(m.at("schema"));
  const Index width = t.schema.feature_width();
  if (csv.values.cols() != width + 3) throw ArtifactError("ingest", "encoded.csv has an unexpected column count");
  t.X = csv.values.leftCols(width);
  t.Y = column_labels(csv.values, width);
  t.S = column_labels(csv.values, width + 1);
  t.ids = csv.ids;
  t.dropped_rows = m.at("dropped_rows").get<std::size_t>();
  return t;
}

CsvMatrix load_embeddings(const RunConfig& c) {
  verify_stage(c, "embed");
  return csv_to_matrix(read_file(ArtifactPaths::of(c).embedding / "embeddings.csv"));
}

ProxyLabels load_proxy(const RunConfig& c) {
  const Json m = verify_stage(c, "cluster");
  const CsvMatrix csv = csv_to_matrix(read_file(ArtifactPaths::of(c).proxy / "proxy.csv"));
  ProxyLabels out;
  out.proxy = column_labels(csv.values, 0);
  out.sizes = {m.at("sizes").at(0).get<Index>(), m.at("sizes").at(1).get<Index>()};
  out.method = m.at("method").get<std::string>();
  return out;
}

// ---- stages -------------------------------------------------------------

Json cmd_ingest(const RunConfig& c) {
  c.validate();
  const auto p = ArtifactPaths::of(c);
  EncodedTable table;
  Json data_hash;
  if (c.dataset == "adult") {
    const fs::path train = fs::path(c.data_dir) / "adult.data", test = fs::path(c.data_dir) / "adult.test";
    for (const auto& f : {train, test})
      if (!fs::exists(f)) throw ArtifactError("ingest", "missing data file " + f.string());
    const FeatureSchema schema = FeatureSchema::adult();
    table = clean_and_encode(concat(ingest_adult(train, schema), ingest_adult(test, schema)), schema,
                             EncodeOptions{c.test_frac, c.split_seed});
    data_hash = {{"adult.data", file_hash(train)}, {"adult.test", file_hash(test)}};
  } else {
    table = make_synthetic(c.synthetic_rows, c.corr_strength, c.seed);
  }
  const SplitIndex parts = split(table, c.test_frac, c.split_seed);
  Matrix values(table.rows(), table.X.cols() + 3);
  values.leftCols(table.X.cols()) = table.X;
  for (Index i = 0; i < table.rows(); ++i) {
    values(i, table.X.cols()) = table.Y[static_cast<std::size_t>(i)];
    values(i, table.X.cols() + 1) = table.S[static_cast<std::size_t>(i)];
    values(i, table.X.cols() + 2) = 0.0;
  }
  for (auto r : parts.test) values(static_cast<Index>(r), table.X.cols() + 2) = 1.0;
  auto names = table.schema.feature_names();
  names.insert(names.end(), {"label", "sensitive", "test"});

  fs::create_directories(p.encoded);
  Json m = begin_manifest(c, "ingest");
  write_payload(m, p.encoded / "encoded.csv", matrix_to_csv(table.ids, values, names));
  m["rows"] = table.rows();
  m["dropped_rows"] = table.dropped_rows;
  m["feature_width"] = table.X.cols();
  m["train_rows"] = parts.train.size();
  m["test_rows"] = parts.test.size();
  m["positive_rate"] = positive_rate(table.Y);
  m["schema"] = schema_json(table.schema);
  if (!data_hash.is_null()) m["data_hash"] = data_hash;
  write_json(p.encoded / "manifest.json", m);
  return m;
}

Json cmd_embed(const RunConfig& c) {
  c.validate();
  const auto p = ArtifactPaths::of(c);
  const EncodedTable table = load_encoded(c);
  Json m = begin_manifest(c, "embed");
  Matrix embedding;
  nn::ParameterList params;
  AutoencoderModel ae;
  TransformerModel tf;
  const Labels* y = c.beta > 0.0 ? &table.Y : nullptr;
  if (c.embedder == "ae") {
    ae = train_autoencoder(table.X, autoencoder_config(c), y);
    embedding = ae.encode(table.X);
    params = ae.parameters();
    m["loss_curve"] = ae.loss_curve;
    m["reconstruction_curve"] = ae.reconstruction_curve;
  } else {
    tf = train_transformer_mlm(table, transformer_config(c), y);
    embedding = tf.row_embeddings(tf.tokenizer.tokenize(table));
    params = tf.parameters();
    m["loss_curve"] = tf.loss_curve;
  }
  std::vector<std::string> names;
  for (Index j = 0; j < embedding.cols(); ++j) names.push_back("e" + std::to_string(j));
  fs::create_directories(p.embedding);
  write_payload(m, p.embedding / "embeddings.csv", matrix_to_csv(table.ids, embedding, names));
  nn::save_checkpoint(p.embedding / "model", params, Json{{"stage", "embed"}, {"config_hash", m.at("config_hash")}});
  m["payload"]["model.bin"] = file_hash(p.embedding / "model.bin");
  m["dim"] = embedding.cols();
  m["rows"] = embedding.rows();
  write_json(p.embedding / "manifest.json", m);
  return m;
}

Json cmd_cluster(const RunConfig& c) {
  c.validate();
  const auto p = ArtifactPaths::of(c);
  const EncodedTable table = load_encoded(c);
  const CsvMatrix emb = load_embeddings(c);
  check_ids(emb.ids, table.ids, "embed");
  Json m = begin_manifest(c, "cluster");
  const Matrix x = c.cluster_scaling == "zscore" ? standardize_columns(emb.values) : emb.values;
  ClusterResult result;
  Json params;
  if (c.clusterer == "kmeans") {
    result = kmeans(x, KMeansOptions{2, c.restarts, 300, c.seed});
    params = {{"k", 2}, {"restarts", c.restarts}, {"seed", c.seed}, {"iterations", result.iterations}};
  } else if (c.clusterer == "hierarchical") {
    result = hierarchical(x, 2, parse_linkage(c.linkage));
    params = {{"k", 2}, {"linkage", c.linkage}};
  } else {
    result = birch(x, BirchOptions{c.birch_threshold, c.birch_branching, 2});
    params = {{"k", 2},
              {"threshold", c.birch_threshold},
              {"branching", c.birch_branching},
              {"subclusters", result.subclusters}};
  }
  const ProxyLabels proxy = assign_proxy(result);
  Matrix values(table.rows(), 1);
  for (Index i = 0; i < table.rows(); ++i) values(i, 0) = proxy.proxy[static_cast<std::size_t>(i)];
  fs::create_directories(p.proxy);
  write_payload(m, p.proxy / "proxy.csv", matrix_to_csv(table.ids, values, {"proxy"}));
  m["method"] = result.method;
  m["params"] = params;
  m["sizes"] = {proxy.sizes[0], proxy.sizes[1]};
  m["inertia"] = result.inertia;
  m["diagnostics"] = {{"balanced_accuracy_vs_s", balanced_accuracy(proxy.proxy, table.S)},
                      {"recovery_accuracy", recovery_accuracy(proxy.proxy, table.S)}};
  write_json(p.proxy / "manifest.json", m);
  return m;
}

Json cmd_mitigate(const RunConfig& c) {
  c.validate();
  const auto p = ArtifactPaths::of(c);
  const EncodedTable table = load_encoded(c);
  const bool proxy_signal = c.mitigator != "erm" && c.group_signal == "proxy";
  Labels signal = table.S;
  if (proxy_signal) signal = load_proxy(c).proxy;
  Json m = begin_manifest(c, "mitigate");
  const SplitIndex parts = split(table, c.test_frac, c.split_seed);
  const TrainSet train = make_train_set(table, parts.train);
  const std::string provenance = c.mitigator == "erm" ? "none" : c.group_signal;
  ClassifierModel model = train_mitigated(train, pick(signal, parts.train), mitigation_config(c), provenance);
  m["loss_curve"] = model.loss_curve;
  fs::create_directories(p.mitigation);
  save_classifier(p.mitigation / "classifier", model, m);
  return verify_stage(c, "mitigate");
}

namespace {

std::string report_markdown(const std::string& label, const FairnessReport& r) {
  const Table1Row row{label, TableCell{{r.ap, 0.0}, {r.spd, 0.0}, {r.eod, 0.0}, 1}};
  return table1_markdown(std::span<const Table1Row>(&row, 1));
}

Json ledger_entry(const MitigationConfig& mc, const std::string& provenance, const FairnessReport& r) {
  return Json{{"algorithm", to_string(mc.algorithm)},
              {"provenance", provenance},
              {"lambda", mc.lambda},
              {"alpha", mc.alpha},
              {"target", to_string(mc.target)},
              {"seed", mc.train.seed},
              {"metrics", r.to_json()}};
}

}  // namespace

Json cmd_evaluate(const RunConfig& c) {
  c.validate();
  const auto p = ArtifactPaths::of(c);
  const Json upstream = verify_stage(c, "mitigate");
  const ClassifierModel model = load_classifier(p.mitigation / "classifier");
  const EncodedTable table = load_encoded(c);
  const SplitIndex parts = split(table, c.test_frac, c.split_seed);
  const FairnessReport report =
      evaluate(model, nn::gather_rows(table.X, parts.test), pick(table.Y, parts.test), pick(table.S, parts.test));
  Json out = report.to_json();
  out["upstream"] = {{"mitigate", upstream.at("config_hash")}};
  write_json(p.mitigation / "report.json", out);
  atomic_write(p.mitigation / "report.md", report_markdown(c.mitigator, report));
  Json run = ledger_entry(model.config, model.provenance, report);
  run["config_hash"] = upstream.at("config_hash");
  write_json(p.mitigation / "run.json", run);
  return out;
}

Json cmd_probe(const RunConfig& c) {
  c.validate();
  const auto p = ArtifactPaths::of(c);
  const EncodedTable table = load_encoded(c);
  const CsvMatrix emb = load_embeddings(c);
  check_ids(emb.ids, table.ids, "embed");
  const ProxyLabels proxy = load_proxy(c);
  Json m = begin_manifest(c, "probe");
  ProbeConfig pc;
  pc.l2 = c.probe_l2;
  pc.test_frac = c.test_frac;
  pc.seed = c.split_seed;
  const SimilarityReport report = analyze(emb.values, proxy.proxy, table.S, table.Y, pc);
  m["similarity"] = report.to_json();
  write_json(p.proxy / "similarity.json", m);
  const fs::path run = ArtifactPaths::of(c).mitigation / "run.json";
  if (c.group_signal == "proxy" && fs::exists(run)) {
    Json ledger = read_json(run);
    ledger["similarity"] = report.to_json();
    write_json(run, ledger);
  }
  return m;
}

// ---- reproduce ----------------------------------------------------------

GridRun run_mitigation(const EncodedTable& table, const SplitIndex& parts, const Labels& groups,
                       const MitigationConfig& config, const std::string& provenance) {
  const TrainSet train = make_train_set(table, parts.train);
  const ClassifierModel model = train_mitigated(train, pick(groups, parts.train), config, provenance);
  GridRun run;
  run.report =
      evaluate(model, nn::gather_rows(table.X, parts.test), pick(table.Y, parts.test), pick(table.S, parts.test));
  run.ledger = ledger_entry(config, model.provenance, run.report);
  return run;
}

namespace {

struct CellRuns {
  TableCell cell;
  Json runs = Json::array();
};

CellRuns run_cell(const RunConfig& c, const EncodedTable& table, const SplitIndex& parts, const Labels& groups,
                  MitigationConfig mc, const std::string& provenance) {
  std::vector<FairnessReport> reports;
  CellRuns out;
  for (int k = 0; k < c.seeds; ++k) {
    mc.train.seed = c.effective_mitigation_seed() + static_cast<std::uint64_t>(k);
    GridRun run = run_mitigation(table, parts, groups, mc, provenance);
    reports.push_back(run.report);
    out.runs.push_back(std::move(run.ledger));
  }
  out.cell = summarize_reports(reports);
  return out;
}

MitigationConfig with(MitigationConfig mc, Algorithm a, FairnessTarget t, double lambda) {
  mc.algorithm = a;
  mc.target = t;
  mc.lambda = lambda;
  return mc;
}

}  // namespace

Json cmd_reproduce(const RunConfig& c) {
  c.validate();
  const auto p = ArtifactPaths::of(c);
  const EncodedTable table = load_encoded(c);
  const SplitIndex parts = split(table, c.test_frac, c.split_seed);
  const MitigationConfig base = mitigation_config(c);
  const CellRuns erm = run_cell(c, table, parts, table.S, with(base, Algorithm::erm, FairnessTarget::dp, 0.0), "none");

  Json out;
  std::string markdown;
  if (c.table == "table1") {
    const CellRuns fm_dp =
        run_cell(c, table, parts, table.S, with(base, Algorithm::fairmixup, FairnessTarget::dp, c.lambda), "true");
    const CellRuns fm_eo =
        run_cell(c, table, parts, table.S, with(base, Algorithm::fairmixup, FairnessTarget::eo, c.eo_lambda), "true");
    const CellRuns adv =
        run_cell(c, table, parts, table.S, with(base, Algorithm::advdeb, FairnessTarget::dp, base.lambda), "true");
    // The fair mixup row reports SPD from the dp run and EOD from the eo run.
    TableCell fm = fm_dp.cell;
    fm.eod = fm_eo.cell.eod;
    const std::vector<Table1Row> rows = {
        {"w/o Bias Mitigation", erm.cell}, {"Fair Mixup", fm}, {"Adversarial Debiasing", adv.cell}};
    markdown = table1_markdown(rows);
    Json rows_json = Json::array();
    for (const auto& r : rows) {
      Json j = cell_json(r.cell);
      j["label"] = r.label;
      rows_json.push_back(j);
    }
    out = {{"table", "table1"},
           {"rows", rows_json},
           {"cells",
            {{"erm", cell_json(erm.cell)},
             {"fairmixup_dp", cell_json(fm_dp.cell)},
             {"fairmixup_eo", cell_json(fm_eo.cell)},
             {"advdeb", cell_json(adv.cell)}}},
           {"ledger",
            {{{"cell", "erm"}, {"runs", erm.runs}},
             {{"cell", "fairmixup_dp"}, {"runs", fm_dp.runs}},
             {{"cell", "fairmixup_eo"}, {"runs", fm_eo.runs}},
             {{"cell", "advdeb"}, {"runs", adv.runs}}}}};
  } else {
    std::vector<Table2Entry> entries;
    Json ledger = Json::array();
    for (const std::string embedder : {"ae", "transformer"}) {
      for (const std::string clusterer : {"kmeans", "hierarchical", "birch"}) {
        RunConfig sub = c;
        sub.embedder = embedder;
        sub.clusterer = clusterer;
        sub.group_signal = "proxy";
        const Json cluster_manifest = ensure_stage(sub, "cluster");
        const Labels groups = load_proxy(sub).proxy;
        Table2Entry e{embedder_name(embedder), clusterer_name(clusterer), {}, {}};
        for (const auto& [name, algorithm] :
             {std::pair{"fairmixup", Algorithm::fairmixup}, std::pair{"advdeb", Algorithm::advdeb}}) {
          const CellRuns cell =
              run_cell(c, table, parts, groups, with(base, algorithm, FairnessTarget::dp, c.lambda), "proxy");
          (algorithm == Algorithm::fairmixup ? e.fair_mixup : e.adversarial) = cell.cell;
          ledger.push_back({{"embedder", embedder},
                            {"clusterer", clusterer},
                            {"mitigator", name},
                            {"proxy", cluster_manifest.at("config_hash")},
                            {"recovery_accuracy", cluster_manifest.at("diagnostics").at("recovery_accuracy")},
                            {"cell", cell_json(cell.cell)},
                            {"runs", cell.runs}});
        }
        entries.push_back(e);
      }
    }
    markdown = table2_markdown(entries);
    out = {{"table", "table2"}, {"baseline", cell_json(erm.cell)}, {"ledger", ledger}};
  }
  out["config"] = stage_config(c, "mitigate");
  out["config"]["seeds"] = c.seeds;
  write_json(p.root / (c.table + ".json"), out);
  atomic_write(p.root / (c.table + ".md"), markdown);
  return out;
}

}  // namespace proxyfair
