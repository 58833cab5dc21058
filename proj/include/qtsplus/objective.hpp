// SPDX-License-Identifier: Apache-2.0
#pragma once

// Compute-aware training objective:
//   L = task + lambda_t (rho M)^2 / n_max^2 + lambda_m rho M / n_max
//            + lambda_s (rho - rho_bar)^2 [+ alpha (rho M - n_bar)]

#include <algorithm>
#include <cstddef>
#include <optional>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/error.hpp"

namespace qtsplus {

struct PenaltyWeights {
  double lambda_t = 0.1;
  double lambda_m = 0.17;
  double lambda_s = 0.05;
  double rho_bar = 0.275;

  void validate() const {
    if (lambda_t < 0 || lambda_m < 0 || lambda_s < 0) fail(ErrorKind::parameter, "penalty weights must be nonnegative");
    if (!(rho_bar > 0 && rho_bar < 1)) fail(ErrorKind::parameter, "rho_bar must lie in (0, 1)");
  }
};

struct PenaltyValue {
  double value = 0;
  double grad_rho = 0;
};

inline PenaltyValue compute_penalties(double rho, std::size_t m, std::size_t n_max, const PenaltyWeights& w) {
  if (m < 1 || n_max < 1) fail(ErrorKind::parameter, "compute_penalties: M and n_max must be at least 1");
  const double mm = static_cast<double>(m);
  const double cap = static_cast<double>(n_max);
  const double kept = rho * mm;
  const double dev = rho - w.rho_bar;
  PenaltyValue p;
  p.value = w.lambda_t * kept * kept / (cap * cap) + w.lambda_m * kept / cap + w.lambda_s * dev * dev;
  p.grad_rho = 2.0 * w.lambda_t * rho * mm * mm / (cap * cap) + w.lambda_m * mm / cap + 2.0 * w.lambda_s * dev;
  return p;
}

// Dataset-level budget constraint rho M <= n_bar, enforced by projected
// ascent on a multiplier alpha >= 0.
struct DualState {
  double alpha = 0;
  double n_bar = 0;
  double step = 1e-3;
};

inline double dual_penalty(double rho, std::size_t m, const DualState& dual) {
  return dual.alpha * (rho * static_cast<double>(m) - dual.n_bar);
}

inline DualState dual_ascent(DualState dual, double rho, std::size_t m) {
  if (!(dual.step > 0)) fail(ErrorKind::parameter, "dual ascent step must be positive");
  dual.alpha = std::max(0.0, dual.alpha + dual.step * (rho * static_cast<double>(m) - dual.n_bar));
  return dual;
}

struct LossValue {
  double value = 0;
  double grad_rho = 0;
};

// Scalar form: task loss value and its rho-derivative in, combined value and
// d/drho out.
inline LossValue total_loss(double task_value, double task_grad_rho, double rho, std::size_t m, std::size_t n_max,
                            const PenaltyWeights& w, const std::optional<DualState>& dual = std::nullopt) {
  const PenaltyValue p = compute_penalties(rho, m, n_max, w);
  LossValue out{task_value + p.value, task_grad_rho + p.grad_rho};
  if (dual) {
    out.value += dual_penalty(rho, m, *dual);
    out.grad_rho += dual->alpha * static_cast<double>(m);
  }
  return out;
}

// Tape form: penalties enter as closed-form nodes of rho; gradients reach the
// budget head through rho and the scoring path through the task loss.
inline ad::Var total_loss(ad::Var task_loss, ad::Var rho, std::size_t m, std::size_t n_max, const PenaltyWeights& w,
                          const std::optional<DualState>& dual = std::nullopt) {
  const PenaltyValue p = compute_penalties(rho.scalar(), m, n_max, w);
  ad::Var total = ad::add(task_loss, ad::scalar_function(rho, p.value, p.grad_rho));
  if (dual) {
    total = ad::add(total, ad::scalar_function(rho, dual_penalty(rho.scalar(), m, *dual),
                                               dual->alpha * static_cast<double>(m)));
  }
  return total;
}

}  // namespace qtsplus
