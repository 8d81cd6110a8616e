#pragma once

#include "proxyfair/dataset.hpp"

#include <span>

namespace proxyfair {

using TokenMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-field private vocabulary. Local ids: 0 = MASK, 1 = UNK, 2.. = values.
struct FieldVocab {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::size_t column = 0;          // index into the schema
  std::vector<int> level_to_local;  // categorical: schema level -> local id (UNK if unseen)
  std::vector<double> edges;        // continuous: ascending quantile cut points
  int size = 2;                     // local vocabulary size
  int offset = 0;                   // first global id of this field
};

// Maps an encoded row to CLS + one token per non-sensitive, non-target field.
class Tokenizer {
 public:
  static constexpr int kMask = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 0;  // global id

  Tokenizer() = default;
  // Fits categorical vocabularies and continuous quantile bins on `rows`.
  static Tokenizer fit(const EncodedTable& table, std::span<const std::size_t> rows, int bins = 10);

  std::vector<int> tokenize_row(const EncodedTable& table, Index row) const;
  TokenMatrix tokenize(const EncodedTable& table) const;

  int field_count() const { return static_cast<int>(fields_.size()); }
  int sequence_length() const { return field_count() + 1; }
  int vocab_size() const { return vocab_size_; }
  int bins() const { return bins_; }
  const FieldVocab& field(int f) const { return fields_[static_cast<std::size_t>(f)]; }
  const std::vector<FieldVocab>& fields() const { return fields_; }

  int mask_token(int f) const { return field(f).offset + kMask; }
  int unk_token(int f) const { return field(f).offset + kUnk; }
  int to_local(int f, int global) const { return global - field(f).offset; }

  // Bin of a continuous value: number of edges strictly below it (right-closed bins).
  static int bin_of(std::span<const double> edges, double value);

 private:
  std::vector<FieldVocab> fields_;
  int vocab_size_ = 1;
  int bins_ = 10;
};

// Quantile with linear interpolation between order statistics.
double quantile_sorted(std::span<const double> sorted, double q);

struct MaskedTokens {
  std::vector<int> tokens;
  std::vector<int> positions;  // masked sequence positions, ascending, never 0 (CLS)
};

int masked_field_count(int fields, double rate);

// Replaces max(1, round(rate * F)) fields with their MASK token; the choice
// depends only on (seed, row_id).
MaskedTokens mask_fields(std::span<const int> tokens, const Tokenizer& tokenizer, double rate, std::uint64_t seed,
                         std::int64_t row_id);

}  // namespace proxyfair
