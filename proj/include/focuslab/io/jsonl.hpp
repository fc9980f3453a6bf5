// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "focuslab/io/files.hpp"

namespace focuslab::io {

using json = nlohmann::json;

/// One object per line; blank lines are skipped. Errors carry the 1-based line number.
inline std::vector<json> parse_jsonl(std::string_view text, const std::string& what = "jsonl") {
  std::vector<json> out;
  std::size_t line = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line;
    std::string_view row = text.substr(pos, nl - pos);
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
    if (row.find_first_not_of(" \t") != std::string_view::npos) {
      try {
        out.push_back(json::parse(row));
      } catch (const json::exception& e) {
        fail(ErrorCode::format, what + ":" + std::to_string(line) + ": " + e.what());
      }
      if (!out.back().is_object()) fail(ErrorCode::format, what + ":" + std::to_string(line) + ": not an object");
    }
    pos = nl + 1;
  }
  return out;
}

inline std::vector<json> read_jsonl(const fs::path& path) { return parse_jsonl(read_file(path), path.string()); }

inline std::string dump_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

inline void write_jsonl(const fs::path& path, const std::vector<json>& rows) { write_file(path, dump_jsonl(rows)); }

/// Pretty JSON with a trailing newline; keys are sorted so output is stable.
inline void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::format, path.string() + ": " + e.what());
  }
}

}  // namespace focuslab::io
