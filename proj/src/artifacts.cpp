#include "proxyfair/artifacts.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace proxyfair {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::string config_hash(const Json& config) { return hex64(fnv1a(config.dump())); }

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error("cannot format double");
  return {buf, end};
}

void atomic_write(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const std::filesystem::path& path, const Json& value) {
  atomic_write(path, value.dump(2) + "\n");
}

Json read_json(const std::filesystem::path& path) { return Json::parse(read_file(path)); }

std::string matrix_to_csv(const std::vector<std::int64_t>& ids, const Matrix& values,
                          const std::vector<std::string>& column_names) {
  if (static_cast<Index>(ids.size()) != values.rows() ||
      static_cast<Index>(column_names.size()) != values.cols())
    throw ShapeError("csv export: ids/columns do not match matrix " +
                     shape_string(values.rows(), values.cols()));
  std::string out = "id";
  for (const auto& name : column_names) out += "," + name;
  out += '\n';
  for (Index r = 0; r < values.rows(); ++r) {
    out += std::to_string(ids[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < values.cols(); ++c) {
      out += ',';
      out += format_double(values(r, c));
    }
    out += '\n';
  }
  return out;
}

CsvMatrix csv_to_matrix(const std::string& text) {
  CsvMatrix result;
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (line_no == 1) {
      for (std::size_t i = 1; i < fields.size(); ++i) result.header.emplace_back(fields[i]);
      continue;
    }
    if (fields.size() != result.header.size() + 1)
      throw ParseError(line_no, "expected " + std::to_string(result.header.size() + 1) + " fields, got " +
                                    std::to_string(fields.size()));
    std::int64_t id = 0;
    std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), id);
    result.ids.push_back(id);
    std::vector<double> row(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto [p, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), row[i - 1]);
      if (ec != std::errc{}) throw ParseError(line_no, "bad number '" + std::string(fields[i]) + "'");
    }
    rows.push_back(std::move(row));
  }
  result.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(result.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      result.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return result;
}

}  // namespace proxyfair
