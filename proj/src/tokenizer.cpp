#include "proxyfair/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace proxyfair {

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

int Tokenizer::bin_of(std::span<const double> edges, double value) {
  return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), value) - edges.begin());
}

Tokenizer Tokenizer::fit(const EncodedTable& table, std::span<const std::size_t> rows, int bins) {
  if (bins < 1) throw Error("tokenizer needs at least one bin");
  if (rows.empty()) throw Error("tokenizer: no rows to fit on");
  Tokenizer t;
  t.bins_ = bins;
  int offset = 1;  // global id 0 is CLS
  const auto& cols = table.schema.columns();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& spec = cols[c];
    if (spec.kind != ColumnKind::categorical && spec.kind != ColumnKind::continuous) continue;
    FieldVocab v;
    v.name = spec.name;
    v.kind = spec.kind;
    v.column = c;
    v.offset = offset;
    if (spec.kind == ColumnKind::categorical) {
      std::vector<bool> seen(spec.levels.size(), false);
      for (auto r : rows) {
        const int level = decode_level(table, c, static_cast<Index>(r));
        if (level >= 0) seen[static_cast<std::size_t>(level)] = true;
      }
      int next = 2;
      v.level_to_local.assign(spec.levels.size(), kUnk);
      for (std::size_t k = 0; k < spec.levels.size(); ++k)
        if (seen[k]) v.level_to_local[k] = next++;
      v.size = next;
    } else {
      const Index col = table.schema.offset_of(c);
      std::vector<double> values;
      values.reserve(rows.size());
      for (auto r : rows) values.push_back(table.X(static_cast<Index>(r), col));
      std::sort(values.begin(), values.end());
      for (int b = 1; b < bins; ++b)
        v.edges.push_back(quantile_sorted(values, static_cast<double>(b) / static_cast<double>(bins)));
      v.size = 2 + bins;
    }
    offset += v.size;
    t.fields_.push_back(std::move(v));
  }
  t.vocab_size_ = offset;
  return t;
}

std::vector<int> Tokenizer::tokenize_row(const EncodedTable& table, Index row) const {
  std::vector<int> out;
  out.reserve(fields_.size() + 1);
  out.push_back(kCls);
  for (const auto& f : fields_) {
    int local = kUnk;
    if (f.kind == ColumnKind::categorical) {
      const int level = decode_level(table, f.column, row);
      if (level >= 0 && level < static_cast<int>(f.level_to_local.size()))
        local = f.level_to_local[static_cast<std::size_t>(level)];
    } else {
      const double v = table.X(row, table.schema.offset_of(f.column));
      if (std::isfinite(v)) local = 2 + bin_of(f.edges, v);
    }
    out.push_back(f.offset + local);
  }
  return out;
}

TokenMatrix Tokenizer::tokenize(const EncodedTable& table) const {
  TokenMatrix m(table.rows(), sequence_length());
  for (Index r = 0; r < table.rows(); ++r) {
    const auto row = tokenize_row(table, r);
    for (int j = 0; j < sequence_length(); ++j) m(r, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

int masked_field_count(int fields, double rate) {
  if (fields <= 0) return 0;
  const int k = static_cast<int>(std::lround(rate * static_cast<double>(fields)));
  return std::clamp(k, 1, fields);
}

MaskedTokens mask_fields(std::span<const int> tokens, const Tokenizer& tokenizer, double rate, std::uint64_t seed,
                         std::int64_t row_id) {
  const int fields = static_cast<int>(tokens.size()) - 1;
  if (fields != tokenizer.field_count())
    throw ShapeError("mask_fields: sequence of " + std::to_string(tokens.size()) + " tokens, tokenizer expects " +
                     std::to_string(tokenizer.sequence_length()));
  MaskedTokens out;
  out.tokens.assign(tokens.begin(), tokens.end());
  const int k = masked_field_count(fields, rate);
  std::vector<int> positions(static_cast<std::size_t>(fields));
  std::iota(positions.begin(), positions.end(), 1);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(row_id)));
  // Partial Fisher-Yates.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, fields - 1);
    std::swap(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(pick(rng))]);
  }
  out.positions.assign(positions.begin(), positions.begin() + k);
  std::sort(out.positions.begin(), out.positions.end());
  for (int p : out.positions) out.tokens[static_cast<std::size_t>(p)] = tokenizer.mask_token(p - 1);
  return out;
}

}  // namespace proxyfair
