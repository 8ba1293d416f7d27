#include "bikelab/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <sstream>

namespace bikelab::io {

json schema_header(std::string_view schema_name) {
  return json{{"v", kSchemaVersion}, {"schema", schema_name}};
}

bool is_schema_header(const json& j) {
  return j.is_object() && j.size() == 2 && j.contains("schema") && j.contains("v");
}

std::vector<json> parse_jsonl(std::string_view text) {
  std::vector<json> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        json j = parse_json(line);
        if (!is_schema_header(j)) out.push_back(std::move(j));
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), e.byte_offset());
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_text(path));
}

std::string to_jsonl(const std::vector<json>& records, std::string_view schema_name) {
  std::string out;
  if (!schema_name.empty()) {
    out += schema_header(schema_name).dump();
    out += '\n';
  }
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records,
                 std::string_view schema_name) {
  write_text(path, to_jsonl(records, schema_name));
}

json read_json(const std::filesystem::path& path) { return parse_json(read_text(path)); }

void write_json(const std::filesystem::path& path, const json& value) {
  write_text(path, value.dump(2) + "\n");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to '" + path.string() + "'");
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

}  // namespace bikelab::io
