#pragma once

#include "proxyfair/common.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace proxyfair {

enum class ColumnKind { categorical, continuous, sensitive, target };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  // Categorical levels; for sensitive/target columns the two levels in {0, 1} order.
  std::vector<std::string> levels;
  // Continuous normalization (filled by clean_and_encode).
  double mean = 0.0;
  double stddev = 1.0;
};

// Column layout of a table plus, after encoding, the offsets of each
// column's block inside X.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<ColumnSpec> columns);

  // Fourteen attributes plus income; "sex" is the sensitive column.
  static FeatureSchema adult();

  const std::vector<ColumnSpec>& columns() const { return columns_; }
  std::vector<ColumnSpec>& columns() { return columns_; }
  std::size_t target_index() const { return target_; }
  std::size_t sensitive_index() const { return sensitive_; }

  // Width of the encoded feature matrix (sensitive and target excluded).
  Index feature_width() const;
  // Start offset inside X of a feature column, or -1 for sensitive/target.
  Index offset_of(std::size_t column) const;
  std::vector<std::string> feature_names() const;

 private:
  std::vector<ColumnSpec> columns_;
  std::size_t target_ = 0;
  std::size_t sensitive_ = 0;
};

struct RawTable {
  std::vector<std::string> columns;
  // std::nullopt marks a missing value.
  std::vector<std::vector<std::optional<std::string>>> rows;
  std::size_t missing_count = 0;
};

struct EncodedTable {
  FeatureSchema schema;
  Matrix X;
  Labels Y;
  // Withheld from X; evaluation only.
  Labels S;
  std::vector<std::int64_t> ids;
  std::size_t dropped_rows = 0;

  Index rows() const { return X.rows(); }
};

struct SplitIndex {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

struct EncodeOptions {
  double test_frac = 0.2;
  std::uint64_t split_seed = 2023;
};

// Parses the comma(+space)-separated Adult files. `?` is the missing
// marker, trailing periods on test-file labels are stripped and `|`
// comment lines are skipped.
RawTable parse_adult(std::string_view text, const FeatureSchema& schema);
RawTable ingest_adult(const std::filesystem::path& path, const FeatureSchema& schema);
RawTable concat(RawTable a, const RawTable& b);

// Drops rows with missing values, one-hot encodes categoricals and z-scores
// continuous columns with statistics of the train split defined by options.
EncodedTable clean_and_encode(const RawTable& raw, const FeatureSchema& schema,
                              const EncodeOptions& options = {});

SplitIndex split(std::size_t n, double test_frac, std::uint64_t seed);
inline SplitIndex split(const EncodedTable& table, double test_frac, std::uint64_t seed) {
  return split(static_cast<std::size_t>(table.rows()), test_frac, seed);
}

// Recovers the level index of a categorical column for one row (-1 if the
// one-hot block is empty).
int decode_level(const EncodedTable& table, std::size_t column, Index row);

struct SyntheticOptions {
  Index group_features = 6;
  Index task_features = 2;
  // Mean shift between groups per group feature at corr_strength = 1.
  double max_shift = 3.0;
  // Fraction of rows whose label is overwritten toward G = 0 favorable.
  double label_bias = 0.3;
};

// Hidden group G drives group-shifted Gaussian features; G is stored as S.
EncodedTable make_synthetic(Index n, double corr_strength, std::uint64_t seed,
                            const SyntheticOptions& options = {});

// Row subset of a table.
EncodedTable take_rows(const EncodedTable& table, std::span<const std::size_t> rows);

// Share of rows with Y = 1.
double positive_rate(const Labels& y);

}  // namespace proxyfair
