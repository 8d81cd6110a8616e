#include "proxyfair/dataset.hpp"

#include "proxyfair/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace proxyfair {

FeatureSchema::FeatureSchema(std::vector<ColumnSpec> columns) : columns_(std::move(columns)) {
  std::size_t targets = 0, sensitives = 0;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& c = columns_[i];
    if (c.kind == ColumnKind::target) {
      target_ = i;
      ++targets;
    } else if (c.kind == ColumnKind::sensitive) {
      sensitive_ = i;
      ++sensitives;
    }
    if (c.kind != ColumnKind::continuous) {
      for (const auto& level : c.levels)
        if (level == "?" || level.empty())
          throw SchemaError("column '" + c.name + "' vocabulary contains the missing marker");
    }
    if ((c.kind == ColumnKind::target || c.kind == ColumnKind::sensitive) && c.levels.size() != 2)
      throw SchemaError("column '" + c.name + "' must have exactly two levels");
  }
  if (targets != 1) throw SchemaError("schema needs exactly one target column");
  if (sensitives != 1) throw SchemaError("schema needs exactly one sensitive column");
}

FeatureSchema FeatureSchema::adult() {
  using K = ColumnKind;
  std::vector<ColumnSpec> cols = {
      {"age", K::continuous, {}},
      {"workclass",
       K::categorical,
       {"Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov", "State-gov", "Without-pay",
        "Never-worked"}},
      {"fnlwgt", K::continuous, {}},
      {"education",
       K::categorical,
       {"Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm", "Assoc-voc", "9th", "7th-8th",
        "12th", "Masters", "1st-4th", "10th", "Doctorate", "5th-6th", "Preschool"}},
      {"education-num", K::continuous, {}},
      {"marital-status",
       K::categorical,
       {"Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed", "Married-spouse-absent",
        "Married-AF-spouse"}},
      {"occupation",
       K::categorical,
       {"Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial", "Prof-specialty",
        "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical", "Farming-fishing", "Transport-moving",
        "Priv-house-serv", "Protective-serv", "Armed-Forces"}},
      {"relationship", K::categorical, {"Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"}},
      {"race", K::categorical, {"White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"}},
      // level index = encoded value: Male -> 0, Female -> 1
      {"sex", K::sensitive, {"Male", "Female"}},
      {"capital-gain", K::continuous, {}},
      {"capital-loss", K::continuous, {}},
      {"hours-per-week", K::continuous, {}},
      {"native-country",
       K::categorical,
       {"United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany", "Outlying-US(Guam-USVI-etc)",
        "India", "Japan", "Greece", "South", "China", "Cuba", "Iran", "Honduras", "Philippines", "Italy", "Poland",
        "Jamaica", "Vietnam", "Mexico", "Portugal", "Ireland", "France", "Dominican-Republic", "Laos", "Ecuador",
        "Taiwan", "Haiti", "Columbia", "Hungary", "Guatemala", "Nicaragua", "Scotland", "Thailand", "Yugoslavia",
        "El-Salvador", "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands"}},
      {"income", K::target, {"<=50K", ">50K"}},
  };
  return FeatureSchema(std::move(cols));
}

Index FeatureSchema::feature_width() const {
  Index w = 0;
  for (const auto& c : columns_) {
    if (c.kind == ColumnKind::categorical)
      w += static_cast<Index>(c.levels.size());
    else if (c.kind == ColumnKind::continuous)
      ++w;
  }
  return w;
}

Index FeatureSchema::offset_of(std::size_t column) const {
  Index w = 0;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& c = columns_[i];
    const bool is_feature = c.kind == ColumnKind::categorical || c.kind == ColumnKind::continuous;
    if (i == column) return is_feature ? w : -1;
    if (c.kind == ColumnKind::categorical)
      w += static_cast<Index>(c.levels.size());
    else if (c.kind == ColumnKind::continuous)
      ++w;
  }
  throw SchemaError("column index out of range");
}

std::vector<std::string> FeatureSchema::feature_names() const {
  std::vector<std::string> names;
  for (const auto& c : columns_) {
    if (c.kind == ColumnKind::categorical)
      for (const auto& level : c.levels) names.push_back(c.name + "=" + level);
    else if (c.kind == ColumnKind::continuous)
      names.push_back(c.name);
  }
  return names;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

RawTable parse_adult(std::string_view text, const FeatureSchema& schema) {
  RawTable table;
  for (const auto& c : schema.columns()) table.columns.push_back(c.name);
  const std::size_t arity = schema.columns().size();

  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '|') continue;

    std::vector<std::optional<std::string>> row;
    row.reserve(arity);
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      auto field = trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
      if (field == "?") {
        row.emplace_back(std::nullopt);
        ++table.missing_count;
      } else {
        row.emplace_back(std::string(field));
      }
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (row.size() != arity)
      throw ParseError(line_no, "expected " + std::to_string(arity) + " fields, got " + std::to_string(row.size()));

    for (std::size_t c = 0; c < arity; ++c) {
      if (!row[c]) continue;
      const auto& spec = schema.columns()[c];
      auto& value = *row[c];
      if (spec.kind == ColumnKind::target && !value.empty() && value.back() == '.') value.pop_back();
      if (spec.kind == ColumnKind::continuous) {
        char* end = nullptr;
        std::strtod(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0')
          throw ParseError(line_no, "column '" + spec.name + "': not a number '" + value + "'");
      } else if (std::find(spec.levels.begin(), spec.levels.end(), value) == spec.levels.end()) {
        throw SchemaError("line " + std::to_string(line_no) + ": column '" + spec.name + "' has unknown level '" +
                          value + "'");
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

RawTable ingest_adult(const std::filesystem::path& path, const FeatureSchema& schema) {
  if (!std::filesystem::exists(path)) throw Error("no such file: " + path.string());
  return parse_adult(read_file(path), schema);
}

RawTable concat(RawTable a, const RawTable& b) {
  if (a.columns.empty()) return b;
  if (a.columns != b.columns) throw SchemaError("cannot concatenate tables with different columns");
  a.rows.insert(a.rows.end(), b.rows.begin(), b.rows.end());
  a.missing_count += b.missing_count;
  return a;
}

SplitIndex split(std::size_t n, double test_frac, std::uint64_t seed) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw Error("test fraction must lie in (0, 1)");
  if (n < 2) throw Error("need at least two rows to split");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  SplitIndex s;
  s.seed = seed;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

EncodedTable clean_and_encode(const RawTable& raw, const FeatureSchema& schema_in, const EncodeOptions& options) {
  const auto& cols = schema_in.columns();
  if (raw.columns.size() != cols.size()) throw SchemaError("schema does not cover all raw columns");
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (raw.columns[c] != cols[c].name) throw SchemaError("column mismatch at '" + raw.columns[c] + "'");

  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    if (std::all_of(row.begin(), row.end(), [](const auto& v) { return v.has_value(); })) kept.push_back(r);
  }

  EncodedTable out;
  out.schema = schema_in;
  out.dropped_rows = raw.rows.size() - kept.size();
  const auto n = static_cast<Index>(kept.size());
  const Index width = schema_in.feature_width();
  out.X = Matrix::Zero(n, width);
  out.Y.resize(kept.size());
  out.S.resize(kept.size());
  out.ids.resize(kept.size());

  auto level_of = [](const ColumnSpec& spec, const std::string& v) {
    return static_cast<int>(std::find(spec.levels.begin(), spec.levels.end(), v) - spec.levels.begin());
  };

  for (Index i = 0; i < n; ++i) {
    const auto& row = raw.rows[kept[static_cast<std::size_t>(i)]];
    out.ids[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(kept[static_cast<std::size_t>(i)]);
    Index off = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto& spec = cols[c];
      const auto& v = *row[c];
      switch (spec.kind) {
        case ColumnKind::categorical: {
          int level = level_of(spec, v);
          if (level >= static_cast<int>(spec.levels.size()))
            throw SchemaError("column '" + spec.name + "' has unknown level '" + v + "'");
          out.X(i, off + level) = 1.0;
          off += static_cast<Index>(spec.levels.size());
          break;
        }
        case ColumnKind::continuous:
          out.X(i, off++) = std::strtod(v.c_str(), nullptr);
          break;
        case ColumnKind::sensitive:
        case ColumnKind::target: {
          int level = level_of(spec, v);
          if (level > 1) throw SchemaError("column '" + spec.name + "' has unknown level '" + v + "'");
          (spec.kind == ColumnKind::sensitive ? out.S : out.Y)[static_cast<std::size_t>(i)] = level;
          break;
        }
      }
    }
  }

  if (n == 0) return out;

  // Continuous statistics from the train split only.
  std::vector<std::size_t> stat_rows;
  if (n >= 2) {
    stat_rows = split(static_cast<std::size_t>(n), options.test_frac, options.split_seed).train;
  } else {
    stat_rows = {0};
  }
  auto& out_cols = out.schema.columns();
  for (std::size_t c = 0; c < out_cols.size(); ++c) {
    auto& spec = out_cols[c];
    const Index off = out.schema.offset_of(c);
    if (off < 0) continue;
    const Index block = spec.kind == ColumnKind::categorical ? static_cast<Index>(spec.levels.size()) : 1;
    for (Index j = off; j < off + block; ++j) {
      double sum = 0.0;
      for (auto r : stat_rows) sum += out.X(static_cast<Index>(r), j);
      const double mean = sum / static_cast<double>(stat_rows.size());
      double ss = 0.0;
      for (auto r : stat_rows) {
        const double d = out.X(static_cast<Index>(r), j) - mean;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / static_cast<double>(stat_rows.size()));
      if (sd < 1e-12) {
        warn("column '" + spec.name + (block > 1 ? "=" + spec.levels[static_cast<std::size_t>(j - off)] : "") +
             "' is constant after cleaning");
      }
      if (spec.kind == ColumnKind::continuous) {
        spec.mean = mean;
        spec.stddev = sd < 1e-12 ? 1.0 : sd;
        out.X.col(j).array() = (out.X.col(j).array() - spec.mean) / spec.stddev;
      }
    }
  }
  return out;
}

int decode_level(const EncodedTable& table, std::size_t column, Index row) {
  const auto& spec = table.schema.columns().at(column);
  if (spec.kind != ColumnKind::categorical) throw SchemaError("column '" + spec.name + "' is not categorical");
  const Index off = table.schema.offset_of(column);
  for (Index k = 0; k < static_cast<Index>(spec.levels.size()); ++k)
    if (table.X(row, off + k) > 0.5) return static_cast<int>(k);
  return -1;
}

EncodedTable make_synthetic(Index n, double corr_strength, std::uint64_t seed, const SyntheticOptions& opt) {
  if (n <= 0) throw Error("synthetic table needs n > 0");
  if (!(corr_strength >= 0.0 && corr_strength <= 1.0)) throw Error("corr_strength must lie in [0, 1]");

  std::vector<ColumnSpec> cols;
  for (Index j = 0; j < opt.group_features; ++j) cols.push_back({"g" + std::to_string(j), ColumnKind::continuous, {}});
  for (Index j = 0; j < opt.task_features; ++j) cols.push_back({"t" + std::to_string(j), ColumnKind::continuous, {}});
  cols.push_back({"group", ColumnKind::sensitive, {"g0", "g1"}});
  cols.push_back({"label", ColumnKind::target, {"neg", "pos"}});

  EncodedTable out;
  out.schema = FeatureSchema(std::move(cols));
  const Index d = opt.group_features + opt.task_features;
  out.X.resize(n, d);
  out.Y.resize(static_cast<std::size_t>(n));
  out.S.resize(static_cast<std::size_t>(n));
  out.ids.resize(static_cast<std::size_t>(n));

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double half_shift = 0.5 * opt.max_shift * corr_strength;
  for (Index i = 0; i < n; ++i) {
    const int g = unif(rng) < 0.5 ? 0 : 1;
    const double sign = g == 0 ? -1.0 : 1.0;
    for (Index j = 0; j < opt.group_features; ++j) out.X(i, j) = sign * half_shift + normal(rng);
    double score = 0.0;
    for (Index j = 0; j < opt.task_features; ++j) {
      out.X(i, opt.group_features + j) = normal(rng);
      score += out.X(i, opt.group_features + j) / static_cast<double>(j + 1);
    }
    int y = score + 0.5 * normal(rng) > 0.0 ? 1 : 0;
    if (unif(rng) < opt.label_bias) y = g == 0 ? 1 : 0;
    out.S[static_cast<std::size_t>(i)] = g;
    out.Y[static_cast<std::size_t>(i)] = y;
    out.ids[static_cast<std::size_t>(i)] = i;
  }
  return out;
}

EncodedTable take_rows(const EncodedTable& table, std::span<const std::size_t> rows) {
  EncodedTable out;
  out.schema = table.schema;
  out.dropped_rows = table.dropped_rows;
  out.X.resize(static_cast<Index>(rows.size()), table.X.cols());
  out.Y.reserve(rows.size());
  out.S.reserve(rows.size());
  out.ids.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = rows[k];
    out.X.row(static_cast<Index>(k)) = table.X.row(static_cast<Index>(r));
    out.Y.push_back(table.Y[r]);
    out.S.push_back(table.S[r]);
    out.ids.push_back(table.ids[r]);
  }
  return out;
}

double positive_rate(const Labels& y) {
  if (y.empty()) return 0.0;
  return static_cast<double>(std::count(y.begin(), y.end(), 1)) / static_cast<double>(y.size());
}

}  // namespace proxyfair
