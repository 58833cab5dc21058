// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat `key = value` text, one pair per line, `#` starts a comment.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qtsplus/error.hpp"

namespace qtsplus::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Malformed lines are reported with `kind` so callers choose the failure class.
inline std::vector<Entry> parse(std::string_view text, ErrorKind kind = ErrorKind::schema) {
  std::vector<Entry> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(kind, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    Entry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (e.key.empty()) fail(kind, "line " + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string write(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::string out;
  for (const auto& [k, v] : pairs) out += k + " = " + v + "\n";
  return out;
}

inline double to_real(const Entry& e, ErrorKind kind = ErrorKind::schema) {
  double v = 0;
  const char* end = e.value.data() + e.value.size();
  auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
    fail(kind, "key '" + e.key + "': expected a finite number, got '" + e.value + "'");
  }
  return v;
}

inline std::uint64_t to_unsigned(const Entry& e, ErrorKind kind = ErrorKind::schema) {
  std::uint64_t v = 0;
  const char* end = e.value.data() + e.value.size();
  auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    fail(kind, "key '" + e.key + "': expected a nonnegative integer, got '" + e.value + "'");
  }
  return v;
}

inline bool to_bool(const Entry& e, ErrorKind kind = ErrorKind::schema) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  fail(kind, "key '" + e.key + "': expected true or false, got '" + e.value + "'");
}

inline std::string from_bool(bool b) { return b ? "true" : "false"; }

}  // namespace qtsplus::kv
