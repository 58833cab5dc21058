// SPDX-License-Identifier: Apache-2.0
#pragma once

// Frame-count scaling benchmark. The downstream model is mocked by one dense
// self-attention pass over whatever tokens reach it, Theta(n^2 d).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "qtsplus/csv.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/harness/workload.hpp"
#include "qtsplus/io.hpp"
#include "qtsplus/matrix.hpp"
#include "qtsplus/rng.hpp"
#include "qtsplus/selector.hpp"

namespace qtsplus::harness {

// Single-head self-attention with identity projections, one query row at a
// time so memory stays O(n d). Returns the sum of the outputs.
template <class T>
double mock_downstream(const BasicMatrix<T>& z) {
  const std::size_t n = z.rows(), d = z.cols();
  if (n == 0) return 0;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<T> s(n), out(d);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto qi = z.row(i);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const auto kj = z.row(j);
      T acc = 0;
      for (std::size_t c = 0; c < d; ++c) acc += qi[c] * kj[c];
      s[j] = acc * scale;
      mx = std::max(mx, s[j]);
    }
    T den = 0;
    for (auto& v : s) {
      v = std::exp(v - mx);
      den += v;
    }
    std::fill(out.begin(), out.end(), T(0));
    for (std::size_t j = 0; j < n; ++j) {
      const auto vj = z.row(j);
      const T a = s[j] / den;
      for (std::size_t c = 0; c < d; ++c) out[c] += a * vj[c];
    }
    for (T v : out) total += static_cast<double>(v);
  }
  return total;
}

template <class T>
BasicMatrix<T> convert(const Matrix& m) {
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<T>(m[i]);
  return out;
}

enum class BenchMode { baseline, qts };

inline const char* to_string(BenchMode m) { return m == BenchMode::baseline ? "baseline" : "qts"; }

inline BenchMode parse_bench_mode(std::string_view s) {
  if (s == "baseline") return BenchMode::baseline;
  if (s == "qts") return BenchMode::qts;
  fail(ErrorKind::parse, "unknown bench mode '" + std::string(s) + "'");
}

struct BenchRecord {
  std::size_t frames = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  double selector_ms = 0;
  double downstream_ms = 0;
  double total_ms = 0;
  BenchMode mode = BenchMode::baseline;
  double checksum = 0;  // mock output, not serialised

  friend bool operator==(const BenchRecord& a, const BenchRecord& b) {
    return a.frames == b.frames && a.m == b.m && a.n == b.n && a.selector_ms == b.selector_ms &&
           a.downstream_ms == b.downstream_ms && a.total_ms == b.total_ms && a.mode == b.mode;
  }
};

struct BenchSpec {
  WorkloadSpec workload;  // frames is overridden per entry
  unsigned precision = 64;
};

inline std::vector<BenchRecord> bench_scaling(const std::vector<std::size_t>& frame_counts, const SelectorModel& model,
                                              const BenchSpec& spec) {
  if (frame_counts.empty()) fail(ErrorKind::empty_input, "no frame counts to benchmark");
  if (spec.precision != 32 && spec.precision != 64) fail(ErrorKind::parameter, "precision must be 32 or 64");
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  auto downstream = [&](const Matrix& z) {
    return spec.precision == 32 ? mock_downstream(convert<float>(z)) : mock_downstream(z);
  };
  std::vector<BenchRecord> out;
  for (std::size_t k = 0; k < frame_counts.size(); ++k) {
    const std::size_t frames = frame_counts[k];
    if (frames == 0) fail(ErrorKind::empty_input, "frame count 0 gives no visual tokens");
    WorkloadSpec ws = spec.workload;
    ws.frames = frames;
    ws.planted = std::min(ws.planted, ws.m());
    Rng rng = derive_rng(ws.seed, k);
    const Workload w = generate_workload(ws, rng);

    BenchRecord base;
    base.frames = frames;
    base.m = ws.m();
    base.n = ws.m();
    base.mode = BenchMode::baseline;
    auto t0 = clock::now();
    base.checksum = downstream(w.x);
    base.downstream_ms = ms_since(t0);
    base.total_ms = base.selector_ms + base.downstream_ms;
    out.push_back(base);

    BenchRecord sel;
    sel.frames = frames;
    sel.m = ws.m();
    sel.mode = BenchMode::qts;
    t0 = clock::now();
    const SelectionResult res = select(w.x, w.timestamps, w.q, model, Mode::infer, rng);
    sel.selector_ms = ms_since(t0);
    sel.n = res.indices.size();
    t0 = clock::now();
    sel.checksum = downstream(res.z);
    sel.downstream_ms = ms_since(t0);
    sel.total_ms = sel.selector_ms + sel.downstream_ms;
    out.push_back(sel);
  }
  return out;
}

inline const csv::Row& bench_header() {
  static const csv::Row h{"frames", "M", "n", "selector_ms", "downstream_ms", "total_ms", "mode"};
  return h;
}

inline std::string emit_bench_csv(const std::vector<BenchRecord>& recs) {
  std::vector<csv::Row> rows;
  for (const auto& r : recs) {
    rows.push_back({std::to_string(r.frames), std::to_string(r.m), std::to_string(r.n), io::format_double(r.selector_ms),
                    io::format_double(r.downstream_ms), io::format_double(r.total_ms), to_string(r.mode)});
  }
  return csv::write(bench_header(), rows);
}

inline std::vector<BenchRecord> parse_bench_csv(std::string_view text) {
  std::vector<BenchRecord> out;
  for (const auto& row : csv::parse_with_header(text, bench_header())) {
    BenchRecord r;
    r.frames = csv::to_count(row[0]);
    r.m = csv::to_count(row[1]);
    r.n = csv::to_count(row[2]);
    r.selector_ms = csv::to_double(row[3]);
    r.downstream_ms = csv::to_double(row[4]);
    r.total_ms = csv::to_double(row[5]);
    r.mode = parse_bench_mode(row[6]);
    out.push_back(r);
  }
  return out;
}

}  // namespace qtsplus::harness
