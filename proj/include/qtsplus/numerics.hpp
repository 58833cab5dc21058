// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/matrix.hpp"
#include "qtsplus/rng.hpp"

namespace qtsplus {

inline constexpr double kNormEps = 1e-6;

inline Matrix softmax_rows(const Matrix& m, double temperature = 1.0) {
  return ad::softmax_rows_value(m, temperature);
}

inline std::vector<double> rmsnorm(std::span<const double> v, std::span<const double> gain, double eps = kNormEps) {
  if (v.size() != gain.size()) fail(ErrorKind::shape, "rmsnorm: gain length mismatch");
  double ms = 0;
  for (double x : v) ms += x * x;
  ms = v.empty() ? 0.0 : ms / static_cast<double>(v.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = gain[i] * v[i] * inv;
  return out;
}

// Attention probabilities, one L x M matrix per head.
struct AttentionMap {
  std::vector<Matrix> weights;

  std::size_t heads() const noexcept { return weights.size(); }
  std::size_t query_len() const noexcept { return weights.empty() ? 0 : weights[0].rows(); }
  std::size_t tokens() const noexcept { return weights.empty() ? 0 : weights[0].cols(); }
  double operator()(std::size_t h, std::size_t l, std::size_t i) const { return weights[h](l, i); }
};

// Full-width projections; head k uses columns [k*d_h, (k+1)*d_h).
struct MhaWeights {
  Matrix wq, wk, wv, wo;

  static MhaWeights identity(std::size_t d) {
    return {Matrix::identity(d), Matrix::identity(d), Matrix::identity(d), Matrix::identity(d)};
  }
  static MhaWeights random(std::size_t d, Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(d));
    MhaWeights w;
    w.wq = uniform_matrix(d, d, b, rng);
    w.wk = uniform_matrix(d, d, b, rng);
    w.wv = uniform_matrix(d, d, b, rng);
    w.wo = uniform_matrix(d, d, b, rng);
    return w;
  }
  std::size_t dim() const noexcept { return wq.rows(); }
};

inline void check_heads(std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    fail(ErrorKind::configuration,
         "model width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
}

inline void check_mha_shapes(const MhaWeights& w, std::size_t d) {
  for (const Matrix* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    if (m->rows() != d || m->cols() != d) {
      fail(ErrorKind::shape, "attention projection " + m->shape_string() + " for width " + std::to_string(d));
    }
  }
}

struct AttentionVars {
  ad::Var output;                // rows(q_in) x d
  std::vector<ad::Var> weights;  // per head, rows(q_in) x rows(kv_in)
};

// Scaled dot-product multi-head attention of q_in over kv_in.
inline AttentionVars multi_head_attention(ad::Var q_in, ad::Var kv_in, const MhaWeights& w, std::size_t heads) {
  const std::size_t d = q_in.cols();
  check_heads(d, heads);
  if (kv_in.cols() != d) fail(ErrorKind::shape, "attention: query width != key/value width");
  check_mha_shapes(w, d);
  ad::Tape& t = *q_in.tape;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var q = ad::matmul(q_in, t.param(w.wq));
  ad::Var k = ad::matmul(kv_in, t.param(w.wk));
  ad::Var v = ad::matmul(kv_in, t.param(w.wv));

  AttentionVars out;
  std::vector<ad::Var> head_out;
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dh, dh);
    ad::Var kh = ad::slice_cols(k, h * dh, dh);
    ad::Var vh = ad::slice_cols(v, h * dh, dh);
    ad::Var att = ad::softmax_rows(ad::scale(ad::matmul_transposed(qh, kh), inv_sqrt));
    out.weights.push_back(att);
    head_out.push_back(ad::matmul(att, vh));
  }
  ad::Var merged = heads == 1 ? head_out[0] : ad::concat_cols(head_out);
  out.output = ad::matmul(merged, t.param(w.wo));
  return out;
}

inline std::pair<Matrix, AttentionMap> multi_head_attention(const Matrix& q_in, const Matrix& kv_in,
                                                            const MhaWeights& w, std::size_t heads) {
  ad::Tape t;
  auto res = multi_head_attention(t.constant(q_in), t.constant(kv_in), w, heads);
  AttentionMap map;
  for (auto v : res.weights) map.weights.push_back(v.value());
  return {res.output.value(), std::move(map)};
}

// Position-wise two-layer transform: silu(x W1 + b1) W2 + b2, hidden width 4d.
struct FfnWeights {
  Matrix w1, b1, w2, b2;

  static FfnWeights zeros(std::size_t d) {
    return {Matrix(d, 4 * d), Matrix(1, 4 * d), Matrix(4 * d, d), Matrix(1, d)};
  }
  static FfnWeights random(std::size_t d, Rng& rng) {
    FfnWeights f = zeros(d);
    f.w1 = uniform_matrix(d, 4 * d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    f.w2 = uniform_matrix(4 * d, d, 1.0 / std::sqrt(static_cast<double>(4 * d)), rng);
    return f;
  }
};

inline ad::Var feed_forward(ad::Var x, const FfnWeights& w) {
  if (x.cols() != w.w1.rows()) {
    fail(ErrorKind::shape, "feed_forward: input " + x.value().shape_string() + " vs W1 " + w.w1.shape_string());
  }
  ad::Tape& t = *x.tape;
  ad::Var h = ad::silu(ad::add_row_broadcast(ad::matmul(x, t.param(w.w1)), t.param(w.b1)));
  return ad::add_row_broadcast(ad::matmul(h, t.param(w.w2)), t.param(w.b2));
}

inline Matrix feed_forward(const Matrix& x, const FfnWeights& w) {
  ad::Tape t;
  return feed_forward(t.constant(x), w).value();
}

// Sinusoidal encoding of absolute seconds. Pair k uses wavelength
// 10^(4k/(K-1)) seconds for K = ceil(d/2) pairs: sin in column 2k, cos in 2k+1.
inline Matrix time_encode(std::span<const double> timestamps, std::size_t d) {
  const std::size_t pairs = (d + 1) / 2;
  Matrix out(timestamps.size(), d);
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    const double ts = timestamps[i];
    if (!std::isfinite(ts) || ts < 0) fail(ErrorKind::input, "timestamp " + std::to_string(i) + " is negative or non-finite");
    for (std::size_t k = 0; k < pairs; ++k) {
      const double exponent = pairs > 1 ? 4.0 * static_cast<double>(k) / static_cast<double>(pairs - 1) : 0.0;
      const double omega = 2.0 * std::numbers::pi / std::pow(10.0, exponent);
      out(i, 2 * k) = std::sin(omega * ts);
      if (2 * k + 1 < d) out(i, 2 * k + 1) = std::cos(omega * ts);
    }
  }
  return out;
}

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
inline std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                                      std::span<const double> x, double step) {
  if (!(step > 0)) fail(ErrorKind::parameter, "finite-difference step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double fp = f(probe);
    probe[i] = x[i] - step;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorKind::oracle, "non-finite evaluation at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

// Norm-wise relative error max|a - b| / max|b|, floored at 1e-8 for all-zero references.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::shape, "relative_error: length mismatch");
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / std::max(1e-8, scale);
}

}  // namespace qtsplus
