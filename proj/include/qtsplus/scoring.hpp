// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/numerics.hpp"

namespace qtsplus {

// Stabiliser in p_i = r_i / (sum_j r_j + eps).
inline constexpr double kRelevanceEps = 1e-8;

struct RelevanceVector {
  std::vector<double> r;

  std::size_t size() const noexcept { return r.size(); }
  double operator[](std::size_t i) const { return r[i]; }
};

struct NormalizedRelevance {
  std::vector<double> p;
  double entropy = 0;
};

// Cross-attention scoring stack. Layer k < depth-1 refines the query stream
// (q <- q + MHA(q, x)); the last layer's attention map is reduced to relevance.
struct ScoringWeights {
  std::vector<MhaWeights> layers;
  std::size_t heads = 1;

  std::size_t depth() const noexcept { return layers.size(); }
  std::size_t dim() const noexcept { return layers.empty() ? 0 : layers[0].dim(); }

  static ScoringWeights identity(std::size_t d, std::size_t heads, std::size_t depth = 1) {
    check_heads(d, heads);
    ScoringWeights w;
    w.heads = heads;
    w.layers.assign(depth, MhaWeights::identity(d));
    return w;
  }
  static ScoringWeights random(std::size_t d, std::size_t heads, std::size_t depth, Rng& rng) {
    check_heads(d, heads);
    ScoringWeights w;
    w.heads = heads;
    for (std::size_t k = 0; k < depth; ++k) w.layers.push_back(MhaWeights::random(d, rng));
    return w;
  }

  void validate() const {
    if (layers.empty()) fail(ErrorKind::configuration, "scoring depth must be at least 1");
    check_heads(dim(), heads);
    for (const auto& l : layers) check_mha_shapes(l, dim());
  }
};

struct ScoreVars {
  std::vector<ad::Var> attention;  // per head, L x M
  ad::Var relevance;               // 1 x M
};

inline ScoreVars score(ad::Var x, ad::Var q, const ScoringWeights& w) {
  if (x.rows() == 0) fail(ErrorKind::empty_input, "no visual tokens (M = 0)");
  if (q.rows() == 0) fail(ErrorKind::empty_input, "no query tokens (L = 0)");
  w.validate();
  if (x.cols() != w.dim() || q.cols() != w.dim()) {
    fail(ErrorKind::shape, "scoring: inputs " + x.value().shape_string() + " / " + q.value().shape_string() +
                               " for width " + std::to_string(w.dim()));
  }
  ad::Var query = q;
  for (std::size_t k = 0; k + 1 < w.depth(); ++k) {
    query = ad::add(query, multi_head_attention(query, x, w.layers[k], w.heads).output);
  }
  ScoreVars out;
  out.attention = multi_head_attention(query, x, w.layers.back(), w.heads).weights;
  // Rows stacked head-major, then by query position, so ties resolve to the
  // first head and first query position.
  ad::Var stacked = out.attention.size() == 1 ? out.attention[0] : ad::concat_rows(out.attention);
  out.relevance = ad::col_max(stacked);
  return out;
}

inline std::pair<AttentionMap, RelevanceVector> score(const Matrix& x, const Matrix& q, const ScoringWeights& w) {
  ad::Tape t;
  ScoreVars s = score(t.constant(x), t.constant(q), w);
  AttentionMap map;
  for (auto v : s.attention) map.weights.push_back(v.value());
  return {std::move(map), RelevanceVector{s.relevance.value().data()}};
}

inline NormalizedRelevance normalize_relevance(const RelevanceVector& r) {
  double total = 0;
  for (double v : r.r) total += v;
  NormalizedRelevance out;
  out.p.resize(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    out.p[i] = r[i] / (total + kRelevanceEps);
    if (out.p[i] > 0) out.entropy -= out.p[i] * std::log(out.p[i]);
  }
  return out;
}

}  // namespace qtsplus
