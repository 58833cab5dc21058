// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/numerics.hpp"

namespace qtsplus {

struct ReencoderBlock {
  Matrix norm1;  // 1 x d
  MhaWeights attn;
  Matrix norm2;  // 1 x d
  FfnWeights ffn;
};

struct ReencoderStack {
  std::vector<ReencoderBlock> blocks;
  std::size_t heads = 1;
  bool time_encoding = true;

  std::size_t depth() const noexcept { return blocks.size(); }

  static ReencoderStack random(std::size_t d, std::size_t heads, std::size_t depth, Rng& rng) {
    check_heads(d, heads);
    ReencoderStack s;
    s.heads = heads;
    for (std::size_t k = 0; k < depth; ++k) {
      ReencoderBlock b;
      b.norm1 = Matrix(1, d, 1.0);
      b.attn = MhaWeights::random(d, rng);
      b.norm2 = Matrix(1, d, 1.0);
      b.ffn = FfnWeights::random(d, rng);
      s.blocks.push_back(std::move(b));
    }
    return s;
  }
};

// Pre-norm residual blocks over the kept tokens:
//   z <- z + MHA(rms(z));  z <- z + FFN(rms(z))
// with the absolute-time encoding added once before the first block. Depth 0
// returns the input untouched.
inline ad::Var reencode(ad::Var z, std::span<const double> timestamps, const ReencoderStack& stack) {
  if (stack.depth() == 0) return z;
  if (z.rows() == 0) fail(ErrorKind::empty_input, "reencode: no tokens");
  if (timestamps.size() != z.rows()) fail(ErrorKind::shape, "reencode: timestamps length != token count");
  const std::size_t d = z.cols();
  ad::Tape& t = *z.tape;
  ad::Var h = z;
  if (stack.time_encoding) h = ad::add(h, t.constant(time_encode(timestamps, d)));
  for (const auto& b : stack.blocks) {
    if (b.norm1.cols() != d || b.norm2.cols() != d) fail(ErrorKind::shape, "reencode: norm gain width != d");
    ad::Var n1 = ad::rmsnorm_rows(h, t.param(b.norm1), kNormEps);
    h = ad::add(h, multi_head_attention(n1, n1, b.attn, stack.heads).output);
    ad::Var n2 = ad::rmsnorm_rows(h, t.param(b.norm2), kNormEps);
    h = ad::add(h, feed_forward(n2, b.ffn));
  }
  return h;
}

inline Matrix reencode(const Matrix& z, std::span<const double> timestamps, const ReencoderStack& stack) {
  ad::Tape t;
  return reencode(t.constant(z), timestamps, stack).value();
}

}  // namespace qtsplus
