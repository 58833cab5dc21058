// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: flat `key = value` text checked against a fixed schema.
// Defaults are the reference training settings at desk-scale width.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qtsplus/error.hpp"
#include "qtsplus/harness/bench.hpp"
#include "qtsplus/harness/trainer.hpp"
#include "qtsplus/harness/workload.hpp"
#include "qtsplus/io.hpp"
#include "qtsplus/keyvalue.hpp"
#include "qtsplus/objective.hpp"
#include "qtsplus/selector.hpp"

namespace qtsplus {

struct RunConfig {
  // model
  std::size_t d = 16;
  std::size_t heads = 2;
  std::size_t query_len = 8;
  std::size_t n_max = 256;
  double rho_min = 0.05;
  double rho_max = 0.5;
  double tau_s = 0.5;
  std::size_t newton_iters = 6;
  double residual_tol = 1e-6;
  std::size_t scoring_depth = 1;
  std::size_t reencode_depth = 2;
  std::size_t budget_hidden = BudgetHead::kDefaultHidden;
  std::size_t budget_layers = 2;
  bool identity_scoring = false;
  bool time_encoding = true;
  Mode mode = Mode::infer;
  std::uint64_t seed = 0;
  // objective
  double lambda_t = 0.1;
  double lambda_m = 0.17;
  double lambda_s = 0.05;
  double rho_bar = 0.275;
  double dual_target = 0;  // 0 disables the dual term
  double dual_step = 1e-3;
  // optimiser
  double learning_rate = 0.05;
  double momentum = 0.9;
  double max_grad_norm = 1.0;
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 4;
  std::size_t batch_size = 4;
  // workloads
  std::size_t frames = 16;
  std::size_t tokens_per_frame = 64;
  double frame_interval = 0.5;
  std::size_t planted = 16;
  double alignment = 4.0;
  std::size_t trials = 200;
  unsigned precision = 64;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const kv::Entry&)> set;
};

namespace detail {

template <class T>
ConfigKey count_key(std::string name, std::string help, T RunConfig::*field) {
  return {std::move(name), std::move(help), [field](const RunConfig& c) { return std::to_string(c.*field); },
          [field](RunConfig& c, const kv::Entry& e) { c.*field = static_cast<T>(kv::to_unsigned(e)); }};
}

inline ConfigKey real_key(std::string name, std::string help, double RunConfig::*field) {
  return {std::move(name), std::move(help), [field](const RunConfig& c) { return io::format_double(c.*field); },
          [field](RunConfig& c, const kv::Entry& e) { c.*field = kv::to_real(e); }};
}

inline ConfigKey bool_key(std::string name, std::string help, bool RunConfig::*field) {
  return {std::move(name), std::move(help), [field](const RunConfig& c) { return kv::from_bool(c.*field); },
          [field](RunConfig& c, const kv::Entry& e) { c.*field = kv::to_bool(e); }};
}

}  // namespace detail

inline const std::vector<ConfigKey>& config_schema() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(count_key("d", "feature width", &RunConfig::d));
    k.push_back(count_key("heads", "attention heads (must divide d)", &RunConfig::heads));
    k.push_back(count_key("query_len", "query tokens per workload", &RunConfig::query_len));
    k.push_back(count_key("n_max", "hard cap on kept tokens", &RunConfig::n_max));
    k.push_back(real_key("rho_min", "lower retention bound", &RunConfig::rho_min));
    k.push_back(real_key("rho_max", "upper retention bound", &RunConfig::rho_max));
    k.push_back(real_key("tau_s", "gate temperature", &RunConfig::tau_s));
    k.push_back(count_key("newton_iters", "threshold Newton iterations", &RunConfig::newton_iters));
    k.push_back(real_key("residual_tol", "threshold residual tolerance, relative to M", &RunConfig::residual_tol));
    k.push_back(count_key("scoring_depth", "cross-attention scoring layers", &RunConfig::scoring_depth));
    k.push_back(count_key("reencode_depth", "re-encoder blocks (0 disables)", &RunConfig::reencode_depth));
    k.push_back(count_key("budget_hidden", "budget head hidden width", &RunConfig::budget_hidden));
    k.push_back(count_key("budget_layers", "budget head hidden layers", &RunConfig::budget_layers));
    k.push_back(bool_key("identity_scoring", "identity scoring projections", &RunConfig::identity_scoring));
    k.push_back(bool_key("time_encoding", "add absolute-time encoding before re-encoding", &RunConfig::time_encoding));
    k.push_back({"mode", "train | infer", [](const RunConfig& c) { return std::string(to_string(c.mode)); },
                 [](RunConfig& c, const kv::Entry& e) {
                   if (e.value == "train") c.mode = Mode::train;
                   else if (e.value == "infer") c.mode = Mode::infer;
                   else fail(ErrorKind::schema, "key 'mode': expected train or infer, got '" + e.value + "'");
                 }});
    k.push_back(count_key("seed", "random seed", &RunConfig::seed));
    k.push_back(real_key("lambda_t", "quadratic compute penalty weight", &RunConfig::lambda_t));
    k.push_back(real_key("lambda_m", "linear memory penalty weight", &RunConfig::lambda_m));
    k.push_back(real_key("lambda_s", "retention prior weight", &RunConfig::lambda_s));
    k.push_back(real_key("rho_bar", "retention prior centre", &RunConfig::rho_bar));
    k.push_back(real_key("dual_target", "dataset budget n_bar for the dual term (0 = off)", &RunConfig::dual_target));
    k.push_back(real_key("dual_step", "dual ascent step", &RunConfig::dual_step));
    k.push_back(real_key("learning_rate", "SGD learning rate", &RunConfig::learning_rate));
    k.push_back(real_key("momentum", "SGD momentum", &RunConfig::momentum));
    k.push_back(real_key("max_grad_norm", "global gradient-norm clip", &RunConfig::max_grad_norm));
    k.push_back(count_key("epochs", "training epochs", &RunConfig::epochs));
    k.push_back(count_key("steps_per_epoch", "optimiser steps per epoch", &RunConfig::steps_per_epoch));
    k.push_back(count_key("batch_size", "workloads per optimiser step", &RunConfig::batch_size));
    k.push_back(count_key("frames", "sampled frames per workload", &RunConfig::frames));
    k.push_back(count_key("tokens_per_frame", "visual tokens per frame (HW/P^2)", &RunConfig::tokens_per_frame));
    k.push_back(real_key("frame_interval", "seconds between sampled frames", &RunConfig::frame_interval));
    k.push_back(count_key("planted", "query-aligned tokens per workload", &RunConfig::planted));
    k.push_back(real_key("alignment", "planted alignment strength", &RunConfig::alignment));
    k.push_back(count_key("trials", "ablation trials", &RunConfig::trials));
    k.push_back({"precision", "mock downstream precision, 32 or 64",
                 [](const RunConfig& c) { return std::to_string(c.precision); },
                 [](RunConfig& c, const kv::Entry& e) {
                   const auto p = kv::to_unsigned(e);
                   if (p != 32 && p != 64) fail(ErrorKind::schema, "key 'precision': expected 32 or 64");
                   c.precision = static_cast<unsigned>(p);
                 }});
    return k;
  }();
  return keys;
}

inline void set_config_key(RunConfig& cfg, const kv::Entry& e) {
  for (const auto& k : config_schema()) {
    if (k.name == e.key) {
      k.set(cfg, e);
      return;
    }
  }
  fail(ErrorKind::schema, "unknown key '" + e.key + "'" + (e.line ? " on line " + std::to_string(e.line) : ""));
}

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  for (const auto& e : kv::parse(text, ErrorKind::schema)) set_config_key(cfg, e);
  return cfg;
}

inline std::string format_run_config(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_schema()) out.emplace_back(k.name, k.get(cfg));
  return kv::write(out);
}

// One line per key: name, default and description.
inline std::string schema_help() {
  const RunConfig defaults;
  std::string out = "Configuration keys (key = value, # comments):\n";
  for (const auto& k : config_schema()) {
    std::string left = "  " + k.name + " = " + k.get(defaults);
    if (left.size() < 34) left.resize(34, ' ');
    out += left + " " + k.help + "\n";
  }
  return out;
}

inline ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.d = c.d;
  m.heads = c.heads;
  m.n_max = c.n_max;
  m.rho_min = c.rho_min;
  m.rho_max = c.rho_max;
  m.budget_hidden = c.budget_hidden;
  m.budget_layers = c.budget_layers;
  m.scoring_depth = c.scoring_depth;
  m.reencode_depth = c.reencode_depth;
  m.identity_scoring = c.identity_scoring;
  m.time_encoding = c.time_encoding;
  m.tau_s = c.tau_s;
  m.newton_iters = c.newton_iters;
  m.residual_tol = c.residual_tol;
  m.seed = c.seed;
  return m;
}

inline PenaltyWeights penalty_weights(const RunConfig& c) { return {c.lambda_t, c.lambda_m, c.lambda_s, c.rho_bar}; }

inline std::optional<DualState> dual_state(const RunConfig& c) {
  if (c.dual_target <= 0) return std::nullopt;
  return DualState{0.0, c.dual_target, c.dual_step};
}

inline harness::OptimizerConfig optimizer_config(const RunConfig& c) {
  return {c.learning_rate, c.momentum, c.max_grad_norm, c.epochs, c.steps_per_epoch, c.batch_size};
}

inline harness::WorkloadSpec workload_spec(const RunConfig& c) {
  harness::WorkloadSpec w;
  w.frames = c.frames;
  w.tokens_per_frame = c.tokens_per_frame;
  w.frame_interval = c.frame_interval;
  w.d = c.d;
  w.query_len = c.query_len;
  w.planted = c.planted;
  w.alignment = c.alignment;
  w.seed = c.seed;
  return w;
}

// Cross-field checks, reported as schema errors.
inline void validate(const RunConfig& c) {
  try {
    model_config(c).validate();
    penalty_weights(c).validate();
    optimizer_config(c).validate();
    if (c.dual_target > 0 && !(c.dual_step > 0)) fail(ErrorKind::parameter, "dual_step must be positive");
    if (c.query_len == 0) fail(ErrorKind::parameter, "query_len must be at least 1");
    if (!(c.tau_s > 0)) fail(ErrorKind::parameter, "tau_s must be positive");
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::schema) throw;
    fail(ErrorKind::schema, e.what());
  }
}

}  // namespace qtsplus
