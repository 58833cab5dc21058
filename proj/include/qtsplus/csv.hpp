// SPDX-License-Identifier: Apache-2.0
#pragma once

// RFC 4180 reading and writing. Fields containing a comma, quote, CR or LF
// are quoted; embedded quotes are doubled. Records end in CRLF on output;
// LF and CRLF are both accepted on input.

#include <string>
#include <string_view>
#include <vector>

#include "qtsplus/error.hpp"

namespace qtsplus::csv {

using Row = std::vector<std::string>;

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string write(const Row& header, const std::vector<Row>& rows) {
  std::string out;
  auto emit = [&](const Row& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += escape(r[i]);
    }
    out += "\r\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out;
}

// Returns every record including the header.
inline std::vector<Row> parse(std::string_view text) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
        continue;
      }
      field += c;
      ++i;
      continue;
    }
    if (c == '"') {
      if (field_started) fail(ErrorKind::parse, "csv: stray quote at offset " + std::to_string(i));
      quoted = true;
      field_started = true;
      ++i;
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\r' || c == '\n') {
      end_row();
      i += (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ? 2 : 1;
    } else {
      field += c;
      field_started = true;
      ++i;
    }
  }
  if (quoted) fail(ErrorKind::parse, "csv: unterminated quoted field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

// Parses and checks the header; returns the data rows.
inline std::vector<Row> parse_with_header(std::string_view text, const Row& expected) {
  auto rows = parse(text);
  if (rows.empty()) fail(ErrorKind::parse, "csv: missing header row");
  if (rows[0] != expected) fail(ErrorKind::parse, "csv: unexpected header");
  for (std::size_t k = 1; k < rows.size(); ++k) {
    if (rows[k].size() != expected.size()) {
      fail(ErrorKind::parse, "csv: record " + std::to_string(k) + " has " + std::to_string(rows[k].size()) +
                                 " fields, expected " + std::to_string(expected.size()));
    }
  }
  rows.erase(rows.begin());
  return rows;
}

inline double to_double(const std::string& s) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    fail(ErrorKind::parse, "csv: not a number: '" + s + "'");
  }
  if (pos != s.size()) fail(ErrorKind::parse, "csv: not a number: '" + s + "'");
  return v;
}

inline std::size_t to_count(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    fail(ErrorKind::parse, "csv: not a count: '" + s + "'");
  }
  if (pos != s.size()) fail(ErrorKind::parse, "csv: not a count: '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace qtsplus::csv
