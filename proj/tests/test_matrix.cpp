// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qtsplus/matrix.hpp"
#include "qtsplus/rng.hpp"

using namespace qtsplus;

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Rng rng(1);
  const Matrix a = normal_matrix(3, 5, 1.0, rng);
  EXPECT_EQ(matmul(Matrix::identity(3), a), a);
}

TEST(Matmul, HandExpansion) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{0}, {1}};
  const Matrix c = matmul(a, b);
  ASSERT_EQ(c.rows(), 2u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c(0, 0), 2);
  EXPECT_EQ(c(1, 0), 4);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = normal_matrix(8, 8, 1.0, rng);
    const Matrix b = normal_matrix(8, 8, 1.0, rng);
    EXPECT_LE(max_abs_diff(matmul(a, b), oracle::triple_loop_matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, RectangularAgainstOracle) {
  Rng rng(3);
  const Matrix a = normal_matrix(5, 7, 1.0, rng);
  const Matrix b = normal_matrix(7, 3, 1.0, rng);
  EXPECT_LE(max_abs_diff(matmul(a, b), oracle::triple_loop_matmul(a, b)), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_transposed(a, transpose(b)), oracle::triple_loop_matmul(a, b)), 1e-12);
}

TEST(Matmul, DimensionMismatchIsShapeError) {
  const Matrix a(2, 3), b(2, 3);
  try {
    (void)matmul(a, b);
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Matrix, RaggedLiteralRejected) {
  EXPECT_THROW((Matrix{{1, 2}, {3}}), Error);
}

TEST(Matrix, DataLengthChecked) { EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), Error); }

TEST(Matrix, GatherRowsAndArithmetic) {
  const Matrix a{{1, 2}, {3, 4}, {5, 6}};
  const std::vector<std::size_t> idx{2, 0};
  const Matrix g = gather_rows(a, std::span<const std::size_t>(idx));
  EXPECT_EQ(g, (Matrix{{5, 6}, {1, 2}}));
  EXPECT_EQ(a + a, a * 2.0);
  EXPECT_EQ(a - a, Matrix(3, 2));
  EXPECT_EQ(transpose(transpose(a)), a);
}

TEST(Matrix, FloatInstantiation) {
  const BasicMatrix<float> a{{1.f, 2.f}, {3.f, 4.f}};
  const auto c = matmul(a, BasicMatrix<float>::identity(2));
  EXPECT_EQ(c, a);
}
