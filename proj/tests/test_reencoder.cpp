// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qtsplus/reencoder.hpp"

using namespace qtsplus;

TEST(Reencode, DepthZeroIsIdentity) {
  Rng rng(51);
  const Matrix z = normal_matrix(5, 4, 1.0, rng);
  ReencoderStack s;
  EXPECT_EQ(reencode(z, std::vector<double>{0, 1, 2, 3, 4}, s), z);
}

TEST(Reencode, ZeroResidualsLeaveTimeEncodedInput) {
  Rng rng(52);
  ReencoderStack s = ReencoderStack::random(6, 2, 2, rng);
  for (auto& b : s.blocks) {
    b.attn.wo = Matrix(6, 6);
    b.ffn.w2 = Matrix(24, 6);
  }
  const Matrix z = normal_matrix(4, 6, 1.0, rng);
  const std::vector<double> ts{0.0, 0.5, 0.5, 7.0};
  EXPECT_LE(max_abs_diff(reencode(z, ts, s), z + time_encode(ts, 6)), 1e-15);
  s.time_encoding = false;
  EXPECT_EQ(reencode(z, ts, s), z);
}

TEST(Reencode, SingleTokenIsFinite) {
  Rng rng(53);
  const ReencoderStack s = ReencoderStack::random(4, 2, 2, rng);
  const Matrix out = reencode(normal_matrix(1, 4, 1.0, rng), std::vector<double>{3.0}, s);
  EXPECT_EQ(out.rows(), 1u);
  EXPECT_TRUE(out.all_finite());
  // single-token softmax
  const auto [o, map] = multi_head_attention(Matrix(1, 4, 0.5), Matrix(1, 4, 0.5), s.blocks[0].attn, 2);
  EXPECT_EQ(map(0, 0, 0), 1.0);
  EXPECT_EQ(map(1, 0, 0), 1.0);
}

TEST(Reencode, MatchesBlockByBlockOracle) {
  Rng rng(54);
  const std::size_t d = 4;
  ReencoderStack s = ReencoderStack::random(d, 2, 2, rng);
  for (auto& b : s.blocks) {
    b.norm1 = uniform_matrix(1, d, 1.0, rng);
    b.norm2 = uniform_matrix(1, d, 1.0, rng);
  }
  const Matrix z = normal_matrix(3, d, 1.0, rng);
  const std::vector<double> ts{1.0, 2.0, 4.0};
  Matrix h = z + time_encode(ts, d);
  auto norm = [&](const Matrix& x, const Matrix& g) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto v = rmsnorm(x.row(r), g.row(0));
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = v[c];
    }
    return out;
  };
  for (const auto& b : s.blocks) {
    const Matrix n1 = norm(h, b.norm1);
    h = h + multi_head_attention(n1, n1, b.attn, 2).first;
    h = h + feed_forward(norm(h, b.norm2), b.ffn);
  }
  EXPECT_LE(max_abs_diff(reencode(z, ts, s), h), 1e-13);
}

TEST(Reencode, TimestampLengthChecked) {
  Rng rng(55);
  const ReencoderStack s = ReencoderStack::random(4, 1, 1, rng);
  try {
    (void)reencode(Matrix(3, 4), std::vector<double>{1, 2}, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Reencode, GradientMatchesFiniteDifferences) {
  Rng rng(56);
  const ReencoderStack s = ReencoderStack::random(4, 2, 2, rng);
  const Matrix z0 = normal_matrix(3, 4, 1.0, rng);
  const Matrix w = normal_matrix(3, 4, 1.0, rng);
  const std::vector<double> ts{0.0, 1.5, 3.0};
  auto f = [&](const std::vector<double>& v) {
    ad::Tape t;
    return ad::sum(ad::hadamard(reencode(t.constant(Matrix(3, 4, v)), ts, s), t.constant(w))).scalar();
  };
  ad::Tape tp;
  ad::Var z = tp.variable(z0);
  tp.backward(ad::sum(ad::hadamard(reencode(z, ts, s), tp.constant(w))));
  EXPECT_LE(oracle::max_rel_error(tp.grad(z).data(), oracle::central_difference(f, z0.data(), 1e-6)), 1e-6);
}
