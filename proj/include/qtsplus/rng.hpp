// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "qtsplus/matrix.hpp"

namespace qtsplus {

using Rng = std::mt19937_64;

// Uniform double in the open interval (0, 1) built from the top 53 bits, so
// streams are reproducible across standard library implementations.
inline double uniform_open01(Rng& rng) {
  for (;;) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u > 0.0) return u;
  }
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform_open01(rng); }

// Standard Gumbel(0, 1) sample.
inline double gumbel(Rng& rng) { return -std::log(-std::log(uniform_open01(rng))); }

// Box-Muller; avoids std::normal_distribution so byte-level outputs do not
// depend on the standard library vendor.
inline double normal(Rng& rng) {
  const double u1 = uniform_open01(rng);
  const double u2 = uniform_open01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Independent stream for trial `index` of a run seeded with `seed`.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x51a7u};
  return Rng(seq);
}

inline Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = uniform(rng, -bound, bound);
  return m;
}

inline Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = stddev * normal(rng);
  return m;
}

}  // namespace qtsplus
