#pragma once
// JSON-lines files and content hashing.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bikelab/core.hpp"

namespace bikelab::io {

/// A schema header is the first line of exported files:
/// {"v":"v1","schema":"<name>"}. Readers skip it.
json schema_header(std::string_view schema_name);
bool is_schema_header(const json& j);

/// Reads a JSONL file; blank lines and schema headers are skipped. Parse
/// errors are rethrown with the line number prepended.
std::vector<json> read_jsonl(const std::filesystem::path& path);
std::vector<json> parse_jsonl(std::string_view text);

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records,
                 std::string_view schema_name = {});
std::string to_jsonl(const std::vector<json>& records, std::string_view schema_name = {});

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

template <typename T>
std::vector<T> read_records(const std::filesystem::path& path) {
  std::vector<T> out;
  for (const auto& j : read_jsonl(path)) out.push_back(from_record<T>(j));
  return out;
}

template <typename T>
std::vector<json> to_records(const std::vector<T>& values) {
  std::vector<json> out;
  out.reserve(values.size());
  for (const auto& v : values) {
    json j = to_record(v);
    j["v"] = kSchemaVersion;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace bikelab::io
