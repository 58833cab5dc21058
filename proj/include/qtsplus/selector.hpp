// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end query-aware token selection: score -> budget -> gate -> re-encode.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <concepts>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/budget.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/gate.hpp"
#include "qtsplus/reencoder.hpp"
#include "qtsplus/rng.hpp"
#include "qtsplus/scoring.hpp"

namespace qtsplus {

enum class Mode { train, infer };

inline const char* to_string(Mode m) { return m == Mode::train ? "train" : "infer"; }

// Shape and hyperparameters a model is built from. Defaults are the
// reference training settings at desk-scale width.
struct ModelConfig {
  std::size_t d = 16;
  std::size_t heads = 2;
  std::size_t n_max = 256;
  double rho_min = 0.05;
  double rho_max = 0.5;
  std::size_t budget_hidden = BudgetHead::kDefaultHidden;
  std::size_t budget_layers = 2;
  std::size_t scoring_depth = 1;
  std::size_t reencode_depth = 2;
  bool identity_scoring = false;
  bool time_encoding = true;
  double tau_s = 0.5;
  std::size_t newton_iters = 6;
  double residual_tol = 1e-6;
  std::uint64_t seed = 0;

  void validate() const {
    check_heads(d, heads);
    if (n_max < 1) fail(ErrorKind::configuration, "n_max must be at least 1");
    if (!(0.0 < rho_min && rho_min < rho_max && rho_max <= 1.0)) {
      fail(ErrorKind::configuration, "retention bounds must satisfy 0 < rho_min < rho_max <= 1");
    }
    if (scoring_depth < 1) fail(ErrorKind::configuration, "scoring_depth must be at least 1");
    if (budget_hidden < 1) fail(ErrorKind::configuration, "budget_hidden must be at least 1");
  }
};

struct SelectorModel {
  ModelConfig config;
  ScoringWeights scoring;
  BudgetHead budget;
  GateConfig gate;
  ReencoderStack reencoder;

  std::size_t d() const noexcept { return config.d; }
  std::size_t n_max() const noexcept { return config.n_max; }

  static SelectorModel create(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng = derive_rng(cfg.seed, 0x5e1ec7);
    SelectorModel m;
    m.config = cfg;
    m.scoring = cfg.identity_scoring ? ScoringWeights::identity(cfg.d, cfg.heads, cfg.scoring_depth)
                                     : ScoringWeights::random(cfg.d, cfg.heads, cfg.scoring_depth, rng);
    m.budget = BudgetHead::random(cfg.d, rng, cfg.budget_hidden, cfg.budget_layers, cfg.rho_min, cfg.rho_max);
    m.gate.tau_s = cfg.tau_s;
    m.gate.newton_iters = cfg.newton_iters;
    m.gate.residual_tol = cfg.residual_tol;
    m.gate.seed = cfg.seed;
    m.reencoder = ReencoderStack::random(cfg.d, cfg.heads, cfg.reencode_depth, rng);
    m.reencoder.time_encoding = cfg.time_encoding;
    return m;
  }

  void validate() const {
    config.validate();
    scoring.validate();
    if (scoring.dim() != config.d) fail(ErrorKind::configuration, "scoring width != model width");
    budget.validate(config.d);
    gate.validate();
  }
};

// Scalar inputs of the budget head together with its outputs, one per call.
struct DiagnosticsRecord {
  double sq_mean = 0;
  double log_m = 0;
  double r_max = 0;
  double entropy = 0;
  double rho = 0;
  double t = 0;
  std::size_t n = 0;
  std::size_t m = 0;

  friend bool operator==(const DiagnosticsRecord&, const DiagnosticsRecord&) = default;
};

struct Diagnostics {
  Mode mode = Mode::infer;
  std::size_t m = 0;
  std::size_t n = 0;            // kept count (realised count in train mode)
  std::size_t budget_n = 0;     // max(1, min(ceil(rho M), n_max, M))
  double target_count = 0;      // rho M
  double rho = 0;
  double t = 0;
  double threshold_residual = 0;
  bool threshold_bisection = false;
  double r_min = 0, r_max = 0, r_mean = 0;
  BudgetFeatures features;
  bool fallback = false;
  bool clamped = false;

  DiagnosticsRecord record() const {
    return {features.sq_mean(), features.log_m, features.r_max, features.entropy, rho, t, n, m};
  }
};

struct SelectionResult {
  Matrix z;
  std::vector<std::size_t> indices;
  Diagnostics diagnostics;
};

struct SelectOptions {
  Mode mode = Mode::infer;
  // Training gate: frozen noise (sampled from the RNG when null), forward
  // semantics, and optionally a frozen kept set for gradient checks.
  const GateNoise* noise = nullptr;
  GateForward gate_forward = GateForward::straight_through;
  const std::vector<std::size_t>* frozen_indices = nullptr;
  bool reencode = true;
};

// Differentiable intermediates of one select() pass.
struct SelectTrace {
  ScoreVars score;
  BudgetFeatureVars features;
  ad::Var rho;
  ThresholdVar threshold;
  ad::Var keep_prob;  // sigmoid((r - t)/tau), 1 x M
  GateVars gate;      // train mode only
  ad::Var z;          // kept (and re-encoded) tokens
  std::vector<std::size_t> indices;
  Diagnostics diagnostics;
};

namespace detail {

inline void check_select_inputs(const Matrix& x, std::span<const double> timestamps, const Matrix& q,
                                const SelectorModel& model) {
  if (x.rows() == 0) fail(ErrorKind::empty_input, "no visual tokens (M = 0)");
  if (q.rows() == 0) fail(ErrorKind::empty_input, "no query tokens (L = 0)");
  if (x.cols() != model.d() || q.cols() != model.d()) {
    fail(ErrorKind::shape, "visual " + x.shape_string() + " / query " + q.shape_string() + " for model width " +
                               std::to_string(model.d()));
  }
  if (timestamps.size() != x.rows()) {
    fail(ErrorKind::shape, "timestamps length " + std::to_string(timestamps.size()) + " != M = " + std::to_string(x.rows()));
  }
  if (!x.all_finite() || !q.all_finite()) fail(ErrorKind::input, "non-finite feature values");
}

}  // namespace detail

inline SelectTrace select_forward(ad::Var x, std::span<const double> timestamps, ad::Var q, const SelectorModel& model,
                                  const SelectOptions& opt, Rng& rng) {
  const std::size_t m = x.rows();
  SelectTrace tr;
  tr.score = score(x, q, model.scoring);
  tr.features = extract_features(q, tr.score.relevance, m);
  tr.rho = predict_rho(tr.features, model.budget);
  tr.threshold = threshold(tr.score.relevance, tr.rho, model.gate);
  tr.keep_prob = keep_probabilities(tr.score.relevance, tr.threshold.t, model.gate.tau_s);

  const double rho = tr.rho.scalar();
  Diagnostics& dg = tr.diagnostics;
  dg.mode = opt.mode;
  dg.m = m;
  dg.rho = rho;
  dg.t = tr.threshold.solve.t;
  dg.threshold_residual = tr.threshold.solve.residual;
  dg.threshold_bisection = tr.threshold.solve.bisection;
  dg.target_count = rho * static_cast<double>(m);
  dg.budget_n = compute_budget(rho, m, model.n_max());
  const auto& r = tr.score.relevance.value().data();
  dg.r_min = *std::min_element(r.begin(), r.end());
  dg.r_max = *std::max_element(r.begin(), r.end());
  dg.r_mean = 0;
  for (double v : r) dg.r_mean += v;
  dg.r_mean /= static_cast<double>(m);
  dg.features.s_q = tr.features.s_q.value().data();
  dg.features.log_m = tr.features.log_m;
  dg.features.r_max = tr.features.r_max.scalar();
  dg.features.entropy = tr.features.entropy.scalar();

  ad::Var kept;
  if (opt.mode == Mode::train) {
    GateNoise sampled;
    const GateNoise* noise = opt.noise;
    if (noise == nullptr) {
      sampled = GateNoise::sample(m, rng);
      noise = &sampled;
    }
    tr.gate = soft_gate(tr.score.relevance, tr.threshold.t, model.gate.tau_s, *noise, opt.gate_forward);
    tr.indices = opt.frozen_indices ? *opt.frozen_indices : tr.gate.mask.indices;
    dg.fallback = tr.gate.mask.fallback;
    ad::Var g = ad::transpose(ad::gather_cols(tr.gate.gate, tr.indices));
    kept = ad::scale_rows(ad::gather_rows(x, tr.indices), g);
  } else {
    RelevanceVector rv{r};
    KeepMask mask = hard_top_n(rv, dg.budget_n);
    dg.clamped = mask.clamped;
    tr.indices = std::move(mask.indices);
    kept = ad::gather_rows(x, tr.indices);
  }
  dg.n = tr.indices.size();

  if (opt.reencode && model.reencoder.depth() > 0) {
    std::vector<double> kept_ts;
    kept_ts.reserve(tr.indices.size());
    for (auto i : tr.indices) kept_ts.push_back(timestamps[i]);
    tr.z = reencode(kept, kept_ts, model.reencoder);
  } else {
    tr.z = kept;
  }
  return tr;
}

// Re-checks the budget and gate contracts on a finished selection.
inline void verify_selection(const SelectionResult& res, const SelectorModel& model) {
  const Diagnostics& dg = res.diagnostics;
  const auto& h = model.budget;
  if (!(dg.rho >= h.rho_min && dg.rho <= h.rho_max)) fail(ErrorKind::numeric, "rho outside [rho_min, rho_max]");
  if (!std::isfinite(dg.t)) fail(ErrorKind::numeric, "non-finite threshold");
  if (res.indices.empty()) fail(ErrorKind::numeric, "selection kept no tokens");
  for (std::size_t k = 1; k < res.indices.size(); ++k) {
    if (res.indices[k] <= res.indices[k - 1]) fail(ErrorKind::numeric, "kept indices not strictly ascending");
  }
  if (res.z.rows() != res.indices.size() || dg.n != res.indices.size()) {
    fail(ErrorKind::numeric, "kept count disagrees with token matrix");
  }
  if (dg.mode == Mode::infer && dg.n != compute_budget(dg.rho, dg.m, model.n_max())) {
    fail(ErrorKind::numeric, "inference kept count differs from the budget");
  }
  if (!res.z.all_finite()) fail(ErrorKind::numeric, "non-finite values in selected tokens");
}

inline SelectionResult select(const Matrix& x, std::span<const double> timestamps, const Matrix& q,
                              const SelectorModel& model, const SelectOptions& opt, Rng& rng) {
  detail::check_select_inputs(x, timestamps, q, model);
  ad::Tape tp;
  SelectTrace tr = select_forward(tp.constant(x), timestamps, tp.constant(q), model, opt, rng);
  SelectionResult res{tr.z.value(), std::move(tr.indices), std::move(tr.diagnostics)};
  verify_selection(res, model);
  return res;
}

inline SelectionResult select(const Matrix& x, std::span<const double> timestamps, const Matrix& q,
                              const SelectorModel& model, Mode mode, Rng& rng) {
  SelectOptions opt;
  opt.mode = mode;
  return select(x, timestamps, q, model, opt, rng);
}

// Every trainable tensor of a model under a stable dotted name. The order is
// the serialisation order.
template <class Model>
  requires std::same_as<std::remove_const_t<Model>, SelectorModel>
auto named_tensors(Model& model) {
  using Ptr = std::conditional_t<std::is_const_v<Model>, const Matrix*, Matrix*>;
  std::vector<std::pair<std::string, Ptr>> out;
  auto mha = [&](const std::string& prefix, auto& w) {
    out.emplace_back(prefix + ".wq", &w.wq);
    out.emplace_back(prefix + ".wk", &w.wk);
    out.emplace_back(prefix + ".wv", &w.wv);
    out.emplace_back(prefix + ".wo", &w.wo);
  };
  for (std::size_t k = 0; k < model.scoring.layers.size(); ++k) {
    mha("scoring.layer" + std::to_string(k), model.scoring.layers[k]);
  }
  for (std::size_t k = 0; k < model.budget.hidden.size(); ++k) {
    out.emplace_back("budget.hidden" + std::to_string(k) + ".w", &model.budget.hidden[k].w);
    out.emplace_back("budget.hidden" + std::to_string(k) + ".b", &model.budget.hidden[k].b);
  }
  out.emplace_back("budget.out.w", &model.budget.out.w);
  out.emplace_back("budget.out.b", &model.budget.out.b);
  for (std::size_t k = 0; k < model.reencoder.blocks.size(); ++k) {
    auto& b = model.reencoder.blocks[k];
    const std::string p = "reencoder.block" + std::to_string(k);
    out.emplace_back(p + ".norm1", &b.norm1);
    mha(p + ".attn", b.attn);
    out.emplace_back(p + ".norm2", &b.norm2);
    out.emplace_back(p + ".ffn.w1", &b.ffn.w1);
    out.emplace_back(p + ".ffn.b1", &b.ffn.b1);
    out.emplace_back(p + ".ffn.w2", &b.ffn.w2);
    out.emplace_back(p + ".ffn.b2", &b.ffn.b2);
  }
  return out;
}

}  // namespace qtsplus
