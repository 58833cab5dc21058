// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pearson coefficients between the budget-head inputs and rho, and between
// rho and the gate threshold, over a log of diagnostics records.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qtsplus/csv.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/io.hpp"
#include "qtsplus/selector.hpp"

namespace qtsplus::harness {

inline constexpr const char* kUndefined = "undefined";

struct CorrelationRow {
  std::string pair;
  std::optional<double> r;  // empty when either column has zero variance
  std::optional<double> slope;
  std::optional<double> intercept;
  std::size_t count = 0;

  friend bool operator==(const CorrelationRow&, const CorrelationRow&) = default;
};

// Least-squares fit y = slope x + intercept and Pearson r. A column counts as
// constant when its centred sum of squares is negligible next to its raw one.
inline CorrelationRow pearson(std::string pair, const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorKind::shape, "pearson: column lengths differ");
  CorrelationRow row;
  row.pair = std::move(pair);
  row.count = x.size();
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0, rx = 0, ry = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
    rx += x[i] * x[i];
    ry += y[i] * y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double tiny = 1e-20;
  const bool x_const = !(sxx > tiny * rx);
  const bool y_const = !(syy > tiny * ry);
  if (!x_const) {
    row.slope = sxy / sxx;
    row.intercept = my - *row.slope * mx;
  }
  if (!x_const && !y_const) row.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return row;
}

inline std::vector<CorrelationRow> correlation_report(const std::vector<DiagnosticsRecord>& recs) {
  if (recs.size() < 3) {
    fail(ErrorKind::input, "correlation report needs at least 3 records, got " + std::to_string(recs.size()));
  }
  std::vector<double> sq, lm, rm, h, rho, t;
  for (const auto& r : recs) {
    sq.push_back(r.sq_mean);
    lm.push_back(r.log_m);
    rm.push_back(r.r_max);
    h.push_back(r.entropy);
    rho.push_back(r.rho);
    t.push_back(r.t);
  }
  return {pearson("sq_mean,rho", sq, rho), pearson("log_m,rho", lm, rho), pearson("r_max,rho", rm, rho),
          pearson("entropy,rho", h, rho), pearson("rho,t", rho, t)};
}

inline const csv::Row& correlation_header() {
  static const csv::Row h{"pair", "r", "slope", "intercept", "count"};
  return h;
}

inline std::string emit_correlation_csv(const std::vector<CorrelationRow>& rows) {
  auto f = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(kUndefined); };
  std::vector<csv::Row> out;
  for (const auto& r : rows) out.push_back({r.pair, f(r.r), f(r.slope), f(r.intercept), std::to_string(r.count)});
  return csv::write(correlation_header(), out);
}

inline std::vector<CorrelationRow> parse_correlation_csv(std::string_view text) {
  auto f = [](const std::string& s) -> std::optional<double> {
    if (s == kUndefined) return std::nullopt;
    return csv::to_double(s);
  };
  std::vector<CorrelationRow> out;
  for (const auto& row : csv::parse_with_header(text, correlation_header())) {
    out.push_back({row[0], f(row[1]), f(row[2]), f(row[3]), csv::to_count(row[4])});
  }
  return out;
}

// Diagnostics records as CSV or as JSON lines.

inline const csv::Row& records_header() {
  static const csv::Row h{"sq_mean", "log_m", "r_max", "entropy", "rho", "t", "n", "m"};
  return h;
}

inline std::string emit_records_csv(const std::vector<DiagnosticsRecord>& recs) {
  std::vector<csv::Row> out;
  for (const auto& r : recs) {
    out.push_back({io::format_double(r.sq_mean), io::format_double(r.log_m), io::format_double(r.r_max),
                   io::format_double(r.entropy), io::format_double(r.rho), io::format_double(r.t), std::to_string(r.n),
                   std::to_string(r.m)});
  }
  return csv::write(records_header(), out);
}

inline nlohmann::json record_to_json(const DiagnosticsRecord& r) {
  return {{"sq_mean", r.sq_mean}, {"log_m", r.log_m}, {"r_max", r.r_max}, {"entropy", r.entropy},
          {"rho", r.rho},         {"t", r.t},         {"n", r.n},         {"m", r.m}};
}

inline std::string emit_records_jsonl(const std::vector<DiagnosticsRecord>& recs) {
  std::string out;
  for (const auto& r : recs) out += record_to_json(r).dump() + "\n";
  return out;
}

inline DiagnosticsRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  DiagnosticsRecord r;
  try {
    r.sq_mean = j.at("sq_mean").get<double>();
    r.log_m = j.at("log_m").get<double>();
    r.r_max = j.at("r_max").get<double>();
    r.entropy = j.at("entropy").get<double>();
    r.rho = j.at("rho").get<double>();
    r.t = j.at("t").get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.m = j.at("m").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, where + ": " + e.what());
  }
  return r;
}

// JSON lines when the first non-blank character is '{', CSV otherwise.
// JSON lines may carry extra keys (the select command adds several).
inline std::vector<DiagnosticsRecord> parse_records(std::string_view text) {
  std::size_t first = text.find_first_not_of(" \t\r\n");
  std::vector<DiagnosticsRecord> out;
  if (first != std::string_view::npos && text[first] == '{') {
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      const std::string_view line = text.substr(pos, nl - pos);
      ++line_no;
      const std::string where = "records line " + std::to_string(line_no) + " (byte offset " + std::to_string(pos) + ")";
      pos = nl + 1;
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, where + ": " + e.what());
      }
      out.push_back(record_from_json(j, where));
    }
    return out;
  }
  for (const auto& row : csv::parse_with_header(text, records_header())) {
    out.push_back({csv::to_double(row[0]), csv::to_double(row[1]), csv::to_double(row[2]), csv::to_double(row[3]),
                   csv::to_double(row[4]), csv::to_double(row[5]), csv::to_count(row[6]), csv::to_count(row[7])});
  }
  return out;
}

}  // namespace qtsplus::harness
