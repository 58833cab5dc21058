// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/matrix.hpp"
#include "qtsplus/rng.hpp"
#include "qtsplus/scoring.hpp"

namespace qtsplus {

struct BudgetFeatures {
  std::vector<double> s_q;  // mean query embedding (d)
  double log_m = 0;
  double r_max = 0;
  double entropy = 0;

  // Scalar reduction of s_q used by the correlation report.
  double sq_mean() const {
    double s = 0;
    for (double v : s_q) s += v;
    return s_q.empty() ? 0.0 : s / static_cast<double>(s_q.size());
  }
};

struct DenseLayer {
  Matrix w;  // in x out
  Matrix b;  // 1 x out
};

// rho = rho_min + (rho_max - rho_min) * sigmoid(w^T phi(features) + b)
// with phi a stack of silu-activated dense layers.
struct BudgetHead {
  std::vector<DenseLayer> hidden;
  DenseLayer out;  // hidden_width x 1
  double rho_min = 0.05;
  double rho_max = 0.5;

  static constexpr std::size_t kDefaultHidden = 128;

  std::size_t input_dim() const noexcept { return hidden.empty() ? out.w.rows() : hidden[0].w.rows(); }

  static BudgetHead random(std::size_t d, Rng& rng, std::size_t width = kDefaultHidden, std::size_t layers = 2,
                           double rho_min = 0.05, double rho_max = 0.5) {
    BudgetHead h;
    h.rho_min = rho_min;
    h.rho_max = rho_max;
    std::size_t in = d + 3;
    for (std::size_t k = 0; k < layers; ++k) {
      h.hidden.push_back({uniform_matrix(in, width, 1.0 / std::sqrt(static_cast<double>(in)), rng), Matrix(1, width)});
      in = width;
    }
    h.out = {uniform_matrix(in, 1, 1.0 / std::sqrt(static_cast<double>(in)), rng), Matrix(1, 1)};
    return h;
  }

  void validate(std::size_t d) const {
    if (!(0.0 < rho_min && rho_min < rho_max && rho_max <= 1.0)) {
      fail(ErrorKind::configuration, "retention bounds must satisfy 0 < rho_min < rho_max <= 1");
    }
    if (input_dim() != d + 3) {
      fail(ErrorKind::configuration,
           "budget head input width " + std::to_string(input_dim()) + " != d + 3 = " + std::to_string(d + 3));
    }
    std::size_t in = d + 3;
    for (const auto& l : hidden) {
      if (l.w.rows() != in || l.b.rows() != 1 || l.b.cols() != l.w.cols()) {
        fail(ErrorKind::configuration, "budget head hidden layer shape mismatch");
      }
      in = l.w.cols();
    }
    if (out.w.rows() != in || out.w.cols() != 1 || out.b.size() != 1) {
      fail(ErrorKind::configuration, "budget head output layer shape mismatch");
    }
  }
};

struct BudgetFeatureVars {
  ad::Var s_q;      // 1 x d
  double log_m = 0;
  ad::Var r_max;    // 1 x 1
  ad::Var entropy;  // 1 x 1
};

inline BudgetFeatureVars extract_features(ad::Var q, ad::Var relevance, std::size_t m) {
  if (q.rows() == 0) fail(ErrorKind::empty_input, "empty query (L = 0)");
  if (relevance.value().size() != m || m == 0) fail(ErrorKind::shape, "relevance length != M");
  BudgetFeatureVars f;
  f.s_q = ad::mean_rows(q);
  f.log_m = std::log(static_cast<double>(m));
  f.r_max = ad::col_max(relevance.rows() == 1 ? ad::transpose(relevance) : relevance);
  f.entropy = ad::normalized_entropy(relevance, kRelevanceEps);
  return f;
}

inline BudgetFeatures extract_features(const Matrix& q, const RelevanceVector& r, std::size_t m) {
  if (q.rows() == 0) fail(ErrorKind::empty_input, "empty query (L = 0)");
  if (r.size() != m || m == 0) fail(ErrorKind::shape, "relevance length != M");
  BudgetFeatures f;
  f.s_q.assign(q.cols(), 0.0);
  for (std::size_t l = 0; l < q.rows(); ++l)
    for (std::size_t j = 0; j < q.cols(); ++j) f.s_q[j] += q(l, j);
  for (auto& v : f.s_q) v /= static_cast<double>(q.rows());
  f.log_m = std::log(static_cast<double>(m));
  f.r_max = *std::max_element(r.r.begin(), r.r.end());
  f.entropy = normalize_relevance(r).entropy;
  return f;
}

// Fixed affine standardisation of the scalar features: log M / 12, r_max,
// H / (ln M + tiny).
inline constexpr double kLogMScale = 12.0;
inline constexpr double kEntropyTiny = 1e-9;

inline ad::Var predict_rho(const BudgetFeatureVars& f, const BudgetHead& head) {
  ad::Tape& t = *f.s_q.tape;
  head.validate(f.s_q.cols());
  ad::Var log_m = t.constant(Matrix::scalar(f.log_m / kLogMScale));
  ad::Var h_scaled = ad::scale(f.entropy, 1.0 / (f.log_m + kEntropyTiny));
  const ad::Var parts[] = {f.s_q, log_m, f.r_max, h_scaled};
  ad::Var h = ad::concat_cols(parts);
  for (const auto& layer : head.hidden) {
    h = ad::silu(ad::add_row_broadcast(ad::matmul(h, t.param(layer.w)), t.param(layer.b)));
  }
  ad::Var logit = ad::add(ad::matmul(h, t.param(head.out.w)), t.param(head.out.b));
  return ad::shift(ad::scale(ad::sigmoid(logit), head.rho_max - head.rho_min), head.rho_min);
}

inline double predict_rho(const BudgetFeatures& f, const BudgetHead& head) {
  ad::Tape t;
  BudgetFeatureVars v;
  v.s_q = t.constant(Matrix::row_vector(f.s_q));
  v.log_m = f.log_m;
  v.r_max = t.constant(Matrix::scalar(f.r_max));
  v.entropy = t.constant(Matrix::scalar(f.entropy));
  return predict_rho(v, head).scalar();
}

// n = max(1, min(ceil(rho M), n_max, M)). The product is shrunk by one part in
// 10^12 before the ceiling so representation error in rho (0.07 * 100 =
// 7.000000000000001) cannot add a token.
inline std::size_t compute_budget(double rho, std::size_t m, std::size_t n_max) {
  const double target = rho * static_cast<double>(m);
  const double c = std::ceil(target * (1.0 - 1e-12));
  std::size_t n = c <= 0 ? 0 : static_cast<std::size_t>(c);
  n = std::min({n, n_max, m});
  return std::max<std::size_t>(n, 1);
}

}  // namespace qtsplus
