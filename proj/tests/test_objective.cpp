// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "qtsplus/objective.hpp"

using namespace qtsplus;

TEST(Penalties, ComputeTermsVanishAtZero) {
  const PenaltyWeights w;
  const auto p = compute_penalties(0.0, 1000, 256, w);
  EXPECT_DOUBLE_EQ(p.value, w.lambda_s * w.rho_bar * w.rho_bar);
}

TEST(Penalties, PublishedFineTuneWeightsExample) {
  const PenaltyWeights w{0.2, 0.3, 0.05, 0.275};
  const auto p = compute_penalties(0.275, 1000, 512, w);
  EXPECT_NEAR(p.value, 0.21883, 1e-5);
  EXPECT_NEAR(p.value, 0.2 * 275.0 * 275.0 / (512.0 * 512.0) + 0.3 * 275.0 / 512.0, 1e-15);
}

TEST(Penalties, GradientMatchesFiniteDifferences) {
  const PenaltyWeights w;
  for (double rho : {0.05, 0.1, 0.275, 0.44, 0.5}) {
    for (std::size_t m : {64u, 1000u, 180000u}) {
      const std::size_t nmax = 256;
      const double h = 1e-6;
      const double fd = (compute_penalties(rho + h, m, nmax, w).value - compute_penalties(rho - h, m, nmax, w).value) / (2 * h);
      const double g = compute_penalties(rho, m, nmax, w).grad_rho;
      EXPECT_LE(std::abs(g - fd) / std::max(1.0, std::abs(g)), 1e-10) << rho << " " << m;
    }
  }
}

TEST(Penalties, GradientIsTheStatedPolynomial) {
  const PenaltyWeights w{0.1, 0.17, 0.05, 0.275};
  const double rho = 0.31, mm = 700, cap = 256;
  const auto p = compute_penalties(rho, 700, 256, w);
  EXPECT_DOUBLE_EQ(p.grad_rho, 0.1 * 2 * rho * mm * mm / (cap * cap) + 0.17 * mm / cap + 2 * 0.05 * (rho - 0.275));
}

TEST(Penalties, ComputeTermsStrictlyIncreasing) {
  const PenaltyWeights w{0.1, 0.17, 0.0, 0.275};
  double prev = compute_penalties(0.0, 500, 256, w).value;
  for (int k = 1; k <= 50; ++k) {
    const double v = compute_penalties(k / 50.0, 500, 256, w).value;
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Penalties, InvalidArguments) {
  EXPECT_THROW(compute_penalties(0.2, 0, 256, PenaltyWeights{}), Error);
  EXPECT_THROW((PenaltyWeights{-1, 0, 0, 0.2}.validate()), Error);
  EXPECT_THROW((PenaltyWeights{0, 0, 0, 1.2}.validate()), Error);
}

TEST(Dual, FeasiblePointIsNeutral) {
  DualState d{0.7, 250, 1e-3};
  EXPECT_DOUBLE_EQ(dual_penalty(0.25, 1000, d), 0.0);
  EXPECT_DOUBLE_EQ(dual_ascent(d, 0.25, 1000).alpha, 0.7);
}

TEST(Dual, ProjectionKeepsAlphaNonnegative) {
  DualState d{0.01, 900, 1e-3};
  d = dual_ascent(d, 0.1, 1000);
  EXPECT_EQ(d.alpha, 0.0);
}

TEST(Dual, ToyJointOptimisationDrivesRhoDown) {
  // descend rho on penalties + alpha (rho M - n_bar), ascend alpha, until feasible
  const PenaltyWeights w{0, 0, 0.05, 0.45};
  DualState d{0.0, 200, 1e-4};
  double rho = 0.45;
  int steps = 0;
  while (rho * 1000 > 200 && steps < 100000) {
    const auto l = total_loss(0.0, 0.0, rho, 1000, 256, w, d);
    rho = std::clamp(rho - 1e-4 * l.grad_rho, 0.05, 0.5);
    const DualState next = dual_ascent(d, rho, 1000);
    if (rho * 1000 > 200) {
      EXPECT_GT(next.alpha, d.alpha);
    }
    d = next;
    ++steps;
  }
  EXPECT_LE(rho * 1000, 200);
  EXPECT_LT(steps, 100000);
  EXPECT_GT(d.alpha, 0.0);
}

TEST(TotalLoss, ZeroTaskEqualsPenalties) {
  const PenaltyWeights w;
  EXPECT_DOUBLE_EQ(total_loss(0.0, 0.0, 0.3, 800, 256, w).value, compute_penalties(0.3, 800, 256, w).value);
}

TEST(TotalLoss, TapeFormCarriesPenaltyGradient) {
  const PenaltyWeights w;
  ad::Tape tp;
  ad::Var rho = tp.variable(Matrix::scalar(0.3));
  ad::Var task = ad::scale(rho, 2.0);
  ad::Var total = total_loss(task, rho, 800, 256, w, DualState{0.5, 100, 1e-3});
  tp.backward(total);
  const auto p = compute_penalties(0.3, 800, 256, w);
  EXPECT_DOUBLE_EQ(total.scalar(), 0.6 + p.value + 0.5 * (0.3 * 800 - 100));
  EXPECT_DOUBLE_EQ(tp.grad(rho)[0], 2.0 + p.grad_rho + 0.5 * 800);
}

TEST(TotalLoss, LargerComputeWeightIncreasesTotal) {
  PenaltyWeights a, b;
  b.lambda_t = 10 * a.lambda_t;
  EXPECT_GT(total_loss(1.0, 0.0, 0.2, 800, 256, b).value, total_loss(1.0, 0.0, 0.2, 800, 256, a).value);
}
