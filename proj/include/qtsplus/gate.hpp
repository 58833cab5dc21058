// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/rng.hpp"
#include "qtsplus/scoring.hpp"

namespace qtsplus {

struct GateConfig {
  double tau_s = 0.5;
  std::size_t newton_iters = 6;
  double residual_tol = 1e-6;  // per token
  double clamp_margin = 10.0;  // Newton iterates stay within [min r - m tau, max r + m tau]
  std::uint64_t seed = 0;

  void validate() const {
    if (!(tau_s > 0) || !std::isfinite(tau_s)) fail(ErrorKind::parameter, "gate temperature tau_s must be positive");
    if (newton_iters < 1) fail(ErrorKind::parameter, "newton_iters must be at least 1");
    if (!(residual_tol > 0)) fail(ErrorKind::parameter, "residual_tol must be positive");
    if (!(clamp_margin > 0)) fail(ErrorKind::parameter, "clamp_margin must be positive");
  }
};

struct ThresholdResult {
  double t = 0;
  double residual = 0;  // sum_i sigma((r_i - t)/tau) - rho M
  std::size_t newton_steps = 0;
  bool bisection = false;
};

namespace detail {

struct GateSums {
  double residual;
  double curvature;  // sum_i s_i (1 - s_i)
};

inline GateSums gate_sums(std::span<const double> r, double t, double tau, double target) {
  double s_sum = 0, c_sum = 0;
  for (double ri : r) {
    const double s = ad::detail::sigmoid((ri - t) / tau);
    s_sum += s;
    c_sum += s * (1.0 - s);
  }
  return {s_sum - target, c_sum};
}

inline double median(std::span<const double> r) {
  std::vector<double> v(r.begin(), r.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Solves sum_i sigma((r_i - t)/tau_s) = rho M for t. Newton from the median
// clamped to a bracket; bisection takes over if the residual stops shrinking
// or J steps leave it above residual_tol * M.
inline ThresholdResult find_threshold(std::span<const double> r, double rho, double tau_s, const GateConfig& cfg) {
  if (r.empty()) fail(ErrorKind::empty_input, "find_threshold: no relevance scores");
  cfg.validate();
  if (!(tau_s > 0)) fail(ErrorKind::parameter, "find_threshold: tau_s must be positive");
  if (!(rho > 0) || !std::isfinite(rho)) fail(ErrorKind::parameter, "find_threshold: rho must be positive");
  if (rho > 1.0) fail(ErrorKind::parameter, "find_threshold: target rho M exceeds M");
  for (double v : r)
    if (!std::isfinite(v)) fail(ErrorKind::input, "find_threshold: non-finite relevance");

  const double m = static_cast<double>(r.size());
  const double target = rho * m;
  const double tol = cfg.residual_tol * m;
  const auto [rmin_it, rmax_it] = std::minmax_element(r.begin(), r.end());
  double lo = *rmin_it - cfg.clamp_margin * tau_s;
  double hi = *rmax_it + cfg.clamp_margin * tau_s;

  ThresholdResult res;
  double t = detail::median(r);
  double prev = std::numeric_limits<double>::infinity();
  bool stalled = false;
  for (std::size_t j = 0; j < cfg.newton_iters; ++j) {
    const auto [u, c] = detail::gate_sums(r, t, tau_s, target);
    if (std::abs(u) >= prev && std::abs(u) > tol) {
      stalled = true;
      break;
    }
    prev = std::abs(u);
    if (u == 0.0) break;
    const double g = -c / tau_s;
    if (!(std::abs(g) > 1e-300)) {
      stalled = true;
      break;
    }
    t = std::clamp(t - u / g, lo, hi);
    ++res.newton_steps;
  }
  res.t = t;
  res.residual = detail::gate_sums(r, t, tau_s, target).residual;
  if (!stalled && std::abs(res.residual) <= tol) return res;

  // Bisection on the monotone residual; widen until the root is bracketed.
  res.bisection = true;
  for (int k = 0; k < 64 && detail::gate_sums(r, lo, tau_s, target).residual < 0; ++k) lo -= (hi - lo);
  for (int k = 0; k < 64 && detail::gate_sums(r, hi, tau_s, target).residual > 0; ++k) hi += (hi - lo);
  for (int k = 0; k < 400; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (detail::gate_sums(r, mid, tau_s, target).residual > 0) lo = mid;
    else hi = mid;
  }
  res.t = 0.5 * (lo + hi);
  res.residual = detail::gate_sums(r, res.t, tau_s, target).residual;
  return res;
}

struct ThresholdGradients {
  double dt_drho = 0;
  std::vector<double> dt_dr;
  bool saturated = false;  // curvature below 1e-12; gradients clamped to zero
};

// Implicit-function derivatives of the solved threshold:
// dt/drho = -M tau / sum s(1-s),  dt/dr_i = s_i(1-s_i) / sum s(1-s).
inline ThresholdGradients threshold_gradients(std::span<const double> r, double rho, double t, double tau_s) {
  (void)rho;
  ThresholdGradients g;
  g.dt_dr.assign(r.size(), 0.0);
  double c = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double s = ad::detail::sigmoid((r[i] - t) / tau_s);
    g.dt_dr[i] = s * (1.0 - s);
    c += g.dt_dr[i];
  }
  if (c < 1e-12) {
    g.saturated = true;
    std::fill(g.dt_dr.begin(), g.dt_dr.end(), 0.0);
    return g;
  }
  g.dt_drho = -static_cast<double>(r.size()) * tau_s / c;
  for (auto& v : g.dt_dr) v /= c;
  return g;
}

struct ThresholdVar {
  ad::Var t;  // 1 x 1
  ThresholdResult solve;
};

// Threshold as a differentiable node of relevance (1 x M) and rho (1 x 1).
inline ThresholdVar threshold(ad::Var relevance, ad::Var rho, const GateConfig& cfg) {
  ad::detail::same_tape(relevance, rho);
  ThresholdVar out;
  const auto& r = relevance.value().data();
  out.solve = find_threshold(r, rho.scalar(), cfg.tau_s, cfg);
  const double tau = cfg.tau_s;
  out.t = relevance.tape->record(Matrix::scalar(out.solve.t), {relevance.id, rho.id},
                                 [rid = relevance.id, pid = rho.id, tau](ad::Tape& tp, std::size_t self) {
                                   const double g = tp.adjoint(self)[0];
                                   const auto& r = tp.value(rid).data();
                                   const auto grads =
                                       threshold_gradients(r, tp.value(pid)[0], tp.value(self)[0], tau);
                                   ad::detail::accumulate_with(tp, rid, [&](Matrix& adj) {
                                     for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g * grads.dt_dr[i];
                                   });
                                   ad::detail::accumulate_with(tp, pid, [&](Matrix& adj) { adj[0] += g * grads.dt_drho; });
                                 });
  return out;
}

// Binary keep/drop decision. `indices` lists kept tokens in ascending order.
struct KeepMask {
  std::vector<std::uint8_t> keep;
  std::vector<std::size_t> indices;
  std::vector<double> noise_keep;  // frozen Gumbel noise (training gate only)
  std::vector<double> noise_drop;
  bool fallback = false;  // no token survived sampling; argmax r was forced on
  bool clamped = false;   // hard_top_n asked for more than M tokens

  std::size_t count() const noexcept { return indices.size(); }
};

struct GateNoise {
  std::vector<double> keep;
  std::vector<double> drop;

  static GateNoise sample(std::size_t m, Rng& rng) {
    GateNoise n;
    n.keep.resize(m);
    n.drop.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      n.keep[i] = gumbel(rng);
      n.drop[i] = gumbel(rng);
    }
    return n;
  }
  static GateNoise zeros(std::size_t m) { return {std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)}; }
};

enum class GateForward {
  straight_through,  // forward hard 0/1, backward through the relaxed sample
  relaxed,           // forward and backward through the relaxed sample
};

struct GateVars {
  ad::Var soft;  // 1 x M relaxed keep probability of the perturbed sample
  ad::Var gate;  // 1 x M values multiplied into kept tokens
  KeepMask mask;
};

// Two-class Gumbel gate over logits [(r - t)/tau, 0]. The categorical logits
// are pre-divided by tau so that P(keep_i) = sigmoid((r_i - t)/tau), the same
// expression the threshold is solved against; the relaxation then uses
// temperature tau on the perturbed logits.
inline GateVars soft_gate(ad::Var relevance, ad::Var t, double tau, const GateNoise& noise, GateForward mode) {
  const std::size_t m = relevance.value().size();
  if (noise.keep.size() != m || noise.drop.size() != m) fail(ErrorKind::shape, "gate noise length != M");
  ad::Tape& tp = *relevance.tape;
  Matrix perturb(1, m);
  for (std::size_t i = 0; i < m; ++i) perturb[i] = noise.keep[i] - noise.drop[i];

  ad::Var logits = ad::scale(ad::add_scalar(relevance, ad::scale(t, -1.0)), 1.0 / tau);
  ad::Var soft = ad::sigmoid(ad::scale(ad::add(logits, tp.constant(perturb)), 1.0 / tau));

  GateVars out;
  out.soft = soft;
  out.mask.keep.assign(m, 0);
  out.mask.noise_keep = noise.keep;
  out.mask.noise_drop = noise.drop;
  const Matrix& lv = logits.value();
  for (std::size_t i = 0; i < m; ++i) {
    if (lv[i] + noise.keep[i] > noise.drop[i]) out.mask.keep[i] = 1;
  }
  if (std::none_of(out.mask.keep.begin(), out.mask.keep.end(), [](auto k) { return k != 0; })) {
    const auto& r = relevance.value().data();
    out.mask.keep[static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin())] = 1;
    out.mask.fallback = true;
  }
  for (std::size_t i = 0; i < m; ++i)
    if (out.mask.keep[i]) out.mask.indices.push_back(i);

  if (mode == GateForward::relaxed) {
    out.gate = soft;
  } else {
    Matrix hard(1, m);
    for (std::size_t i = 0; i < m; ++i) hard[i] = out.mask.keep[i];
    out.gate = ad::straight_through(soft, std::move(hard));
  }
  return out;
}

struct SoftGateResult {
  KeepMask mask;
  std::vector<double> soft_scores;
};

inline SoftGateResult soft_gate_train(const RelevanceVector& r, double t, const GateConfig& cfg, Rng& rng) {
  cfg.validate();
  ad::Tape tp;
  GateNoise noise = GateNoise::sample(r.size(), rng);
  GateVars g = soft_gate(tp.constant(Matrix::row_vector(r.r)), tp.constant(Matrix::scalar(t)), cfg.tau_s, noise,
                         GateForward::straight_through);
  return {std::move(g.mask), g.soft.value().data()};
}

// Noise-free keep probabilities sigmoid((r_i - t)/tau).
inline ad::Var keep_probabilities(ad::Var relevance, ad::Var t, double tau) {
  return ad::sigmoid(ad::scale(ad::add_scalar(relevance, ad::scale(t, -1.0)), 1.0 / tau));
}

// The n highest-relevance tokens (ties to the lower index), returned in
// ascending index order. n > M is clamped to M and flagged.
inline KeepMask hard_top_n(const RelevanceVector& r, std::size_t n) {
  if (r.size() == 0) fail(ErrorKind::empty_input, "hard_top_n: no relevance scores");
  if (n == 0) fail(ErrorKind::parameter, "hard_top_n: n must be at least 1");
  KeepMask mask;
  if (n > r.size()) {
    n = r.size();
    mask.clamped = true;
  }
  std::vector<std::size_t> order(r.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) { return r[a] > r[b] || (r[a] == r[b] && a < b); };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - 1), order.end(), better);
  mask.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(mask.indices.begin(), mask.indices.end());
  mask.keep.assign(r.size(), 0);
  for (auto i : mask.indices) mask.keep[i] = 1;
  return mask;
}

}  // namespace qtsplus
