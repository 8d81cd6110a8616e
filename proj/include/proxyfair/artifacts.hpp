#pragma once

#include "proxyfair/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace proxyfair {

using Json = nlohmann::json;

class ArtifactError : public Error {
 public:
  ArtifactError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

class StaleArtifactError : public ArtifactError {
 public:
  using ArtifactError::ArtifactError;
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);
// Hash of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const Json& config);

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

// Writes to <path>.tmp then renames over <path>.
void atomic_write(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const Json& value);
Json read_json(const std::filesystem::path& path);

// `id,<prefix>0,...` CSV with one row per matrix row.
std::string matrix_to_csv(const std::vector<std::int64_t>& ids, const Matrix& values,
                          const std::vector<std::string>& column_names);
struct CsvMatrix {
  std::vector<std::string> header;
  std::vector<std::int64_t> ids;
  Matrix values;
};
CsvMatrix csv_to_matrix(const std::string& text);

}  // namespace proxyfair
