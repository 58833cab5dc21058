// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <functional>

#include "oracles.hpp"
#include "qtsplus/autodiff.hpp"
#include "qtsplus/numerics.hpp"
#include "qtsplus/rng.hpp"

using namespace qtsplus;

namespace {

// Tape gradient of a scalar graph built by `build` against central
// differences on every entry of the input.
double check(const Matrix& x0, const std::function<ad::Var(ad::Var)>& build, double h = 1e-6) {
  ad::Tape tp;
  ad::Var x = tp.variable(x0);
  ad::Var y = build(x);
  tp.backward(y);
  const auto g = tp.grad(x).data();
  auto f = [&](const std::vector<double>& v) {
    ad::Tape t2;
    return build(t2.constant(Matrix(x0.rows(), x0.cols(), v))).scalar();
  };
  return oracle::max_rel_error(g, oracle::central_difference(f, x0.data(), h));
}

}  // namespace

TEST(Tape, BackwardVisitsNodesInReverseCreationOrder) {
  ad::Tape tp;
  ad::Var a = tp.variable(Matrix::scalar(2));
  ad::Var b = ad::scale(a, 3);
  ad::Var c = ad::sigmoid(b);
  ad::Var d = ad::sum(c);
  tp.backward(d);
  const auto& order = tp.last_backward_order();
  ASSERT_FALSE(order.empty());
  for (std::size_t k = 1; k < order.size(); ++k) EXPECT_GT(order[k - 1], order[k]);
  EXPECT_EQ(order.front(), d.id);
}

TEST(Tape, ParamIsSharedByAddress) {
  Matrix w{{1.5}};
  ad::Tape tp;
  ad::Var a = tp.param(w);
  ad::Var b = tp.param(w);
  EXPECT_EQ(a.id, b.id);
  tp.backward(ad::sum(ad::hadamard(a, b)));  // w^2
  EXPECT_DOUBLE_EQ(tp.grad_of(w)[0], 3.0);
}

TEST(Tape, LossMustBeScalar) {
  ad::Tape tp;
  ad::Var a = tp.variable(Matrix(2, 2, 1.0));
  EXPECT_THROW(tp.backward(a), Error);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  ad::Tape tp;
  ad::Var c = tp.constant(Matrix::scalar(4));
  ad::Var v = tp.variable(Matrix::scalar(2));
  tp.backward(ad::sum(ad::hadamard(c, v)));
  EXPECT_DOUBLE_EQ(tp.grad(v)[0], 4.0);
  EXPECT_DOUBLE_EQ(tp.grad(c)[0], 0.0);
}

TEST(TapeGradients, ElementwiseOps) {
  Rng rng(5);
  const Matrix x = normal_matrix(3, 4, 1.0, rng);
  EXPECT_LE(check(x, [](ad::Var v) { return ad::sum(ad::sigmoid(v)); }), 1e-7);
  EXPECT_LE(check(x, [](ad::Var v) { return ad::sum(ad::silu(v)); }), 1e-7);
  EXPECT_LE(check(x, [](ad::Var v) { return ad::sum(ad::log(ad::shift(ad::hadamard(v, v), 1.0))); }), 1e-7);
  EXPECT_LE(check(x, [](ad::Var v) { return ad::sum(ad::scale(ad::sub(v, ad::transpose(ad::transpose(v))), 2)); }),
            1e-7);
}

TEST(TapeGradients, MatrixProducts) {
  Rng rng(6);
  const Matrix x = normal_matrix(3, 4, 1.0, rng);
  const Matrix w = normal_matrix(4, 2, 1.0, rng);
  EXPECT_LE(check(x, [&](ad::Var v) { return ad::sum(ad::sigmoid(ad::matmul(v, v.tape->constant(w)))); }), 1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) { return ad::sum(ad::sigmoid(ad::matmul_transposed(v, v))); }), 1e-7);
}

TEST(TapeGradients, RowOps) {
  Rng rng(7);
  const Matrix x = normal_matrix(3, 5, 1.0, rng);
  const Matrix gain = normal_matrix(1, 5, 1.0, rng);
  const Matrix bias = normal_matrix(1, 5, 1.0, rng);
  auto weight = [](ad::Var v) {
    Matrix w(v.rows(), v.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + static_cast<double>(i));
    return ad::sum(ad::hadamard(v, v.tape->constant(w)));
  };
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::softmax_rows(v, 0.7)); }), 1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::rmsnorm_rows(v, v.tape->constant(gain), 1e-6)); }), 1e-6);
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::add_row_broadcast(v, v.tape->constant(bias))); }), 1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::mean_rows(v)); }), 1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::col_max(v)); }), 1e-7);
}

TEST(TapeGradients, SlicingAndGathering) {
  Rng rng(8);
  const Matrix x = normal_matrix(4, 6, 1.0, rng);
  auto weight = [](ad::Var v) {
    Matrix w(v.rows(), v.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.3 * static_cast<double>(i));
    return ad::sum(ad::hadamard(v, v.tape->constant(w)));
  };
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::slice_cols(v, 2, 3)); }), 1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) {
              const ad::Var parts[] = {ad::slice_cols(v, 0, 2), ad::slice_cols(v, 3, 3)};
              return weight(ad::sigmoid(ad::concat_cols(parts)));
            }),
            1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) {
              const ad::Var parts[] = {v, ad::scale(v, 2)};
              return weight(ad::sigmoid(ad::concat_rows(parts)));
            }),
            1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::gather_rows(v, {3, 1, 1})); }), 1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::gather_cols(v, {5, 0})); }), 1e-7);
  EXPECT_LE(check(x, [&](ad::Var v) { return weight(ad::scale_rows(v, ad::slice_cols(v, 0, 1))); }), 1e-7);
}

TEST(TapeGradients, ScalarBroadcastAndEntropy) {
  Rng rng(9);
  Matrix x = uniform_matrix(1, 7, 1.0, rng);
  for (auto& v : x.data()) v = std::abs(v) + 0.05;
  EXPECT_LE(check(x, [](ad::Var v) { return ad::normalized_entropy(v, 1e-8); }), 1e-6);
  EXPECT_LE(check(x, [](ad::Var v) { return ad::sum(ad::sigmoid(ad::add_scalar(v, ad::slice_cols(v, 2, 1)))); }),
            1e-7);
}

TEST(TapeGradients, StraightThroughUsesSoftBackward) {
  ad::Tape tp;
  ad::Var x = tp.variable(Matrix{{0.3, -0.2}});
  ad::Var soft = ad::sigmoid(x);
  ad::Var st = ad::straight_through(soft, Matrix{{1, 0}});
  EXPECT_EQ(st.value(), (Matrix{{1, 0}}));
  tp.backward(ad::sum(st));
  const double s0 = oracle::logistic(0.3), s1 = oracle::logistic(-0.2);
  EXPECT_NEAR(tp.grad(x)[0], s0 * (1 - s0), 1e-15);
  EXPECT_NEAR(tp.grad(x)[1], s1 * (1 - s1), 1e-15);
}

TEST(TapeGradients, ScalarFunctionCarriesGivenDerivative) {
  ad::Tape tp;
  ad::Var x = tp.variable(Matrix::scalar(2.0));
  ad::Var y = ad::scalar_function(x, 8.0, 12.0);  // x^3
  EXPECT_EQ(y.scalar(), 8.0);
  tp.backward(y);
  EXPECT_EQ(tp.grad(x)[0], 12.0);
}

TEST(TapeGradients, DifferentTapesRejected) {
  ad::Tape a, b;
  EXPECT_THROW(ad::add(a.variable(Matrix::scalar(1)), b.variable(Matrix::scalar(1))), Error);
}
