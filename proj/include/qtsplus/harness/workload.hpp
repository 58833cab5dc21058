// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic planted-relevance workloads. A random subset of K visual tokens
// is pushed towards the query rows; everything else is isotropic noise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "qtsplus/error.hpp"
#include "qtsplus/matrix.hpp"
#include "qtsplus/rng.hpp"

namespace qtsplus::harness {

// M = (T / dt) * (H W / P^2).
inline std::size_t visual_token_count(double duration_s, double frame_interval_s, std::size_t height,
                                      std::size_t width, std::size_t patch) {
  if (!(duration_s >= 0) || !(frame_interval_s > 0)) fail(ErrorKind::input, "duration must be >= 0 and dt > 0");
  if (patch == 0 || height % patch || width % patch) fail(ErrorKind::input, "frame size must be a multiple of the patch size");
  const auto frames = static_cast<std::size_t>(std::floor(duration_s / frame_interval_s + 1e-9));
  return frames * (height / patch) * (width / patch);
}

struct WorkloadSpec {
  std::size_t frames = 16;
  std::size_t tokens_per_frame = 64;
  double frame_interval = 0.5;  // seconds between sampled frames
  std::size_t d = 16;
  std::size_t query_len = 8;
  std::size_t planted = 16;
  double alignment = 4.0;
  std::uint64_t seed = 0;

  std::size_t m() const noexcept { return frames * tokens_per_frame; }

  void validate() const {
    if (m() == 0) fail(ErrorKind::empty_input, "workload has no visual tokens");
    if (d == 0 || query_len == 0) fail(ErrorKind::input, "workload needs d >= 1 and query_len >= 1");
    if (planted > m()) {
      fail(ErrorKind::input, "planted count " + std::to_string(planted) + " exceeds M = " + std::to_string(m()));
    }
    if (!(alignment > 0) || !std::isfinite(alignment)) fail(ErrorKind::input, "alignment strength must be positive");
    if (!(frame_interval > 0)) fail(ErrorKind::input, "frame_interval must be positive");
  }
};

struct Workload {
  Matrix x;                          // M x d
  std::vector<double> timestamps;    // M, seconds
  Matrix q;                          // L x d
  std::vector<std::size_t> planted;  // ascending
};

// Planted token i carries alignment * q[j] for query row j = rank mod L on
// top of the noise, so its expected inner product with q[j] is
// alignment * |q[j]|^2 while distractors have expectation 0.
inline Workload generate_workload(const WorkloadSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t m = spec.m();
  Workload w;
  w.q = normal_matrix(spec.query_len, spec.d, 1.0, rng);
  w.x = normal_matrix(m, spec.d, 1.0, rng);
  w.timestamps.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    w.timestamps[i] = static_cast<double>(i / spec.tokens_per_frame) * spec.frame_interval;
  }
  // partial Fisher-Yates over positions
  std::vector<std::size_t> pos(m);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  for (std::size_t k = 0; k < spec.planted; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(uniform_open01(rng) * static_cast<double>(m - k));
    std::swap(pos[k], pos[std::min(j, m - 1)]);
  }
  w.planted.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(spec.planted));
  for (std::size_t k = 0; k < spec.planted; ++k) {
    auto row = w.x.row(w.planted[k]);
    auto qrow = w.q.row(k % spec.query_len);
    for (std::size_t c = 0; c < spec.d; ++c) row[c] += spec.alignment * qrow[c];
  }
  std::sort(w.planted.begin(), w.planted.end());
  return w;
}

// Share of planted tokens present in an ascending kept set.
inline double recall(const std::vector<std::size_t>& kept, const std::vector<std::size_t>& planted) {
  if (planted.empty()) return 1.0;
  std::size_t hit = 0, a = 0, b = 0;
  while (a < kept.size() && b < planted.size()) {
    if (kept[a] == planted[b]) { ++hit; ++a; ++b; }
    else if (kept[a] < planted[b]) ++a;
    else ++b;
  }
  return static_cast<double>(hit) / static_cast<double>(planted.size());
}

}  // namespace qtsplus::harness
