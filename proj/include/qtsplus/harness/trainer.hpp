// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale training of the scoring and budget parameters on planted
// workloads. Task loss: -log of the mean keep probability of the planted
// tokens, plus the compute penalties (and the dual term when enabled).
// Optimiser: SGD with momentum and global gradient-norm clipping.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qtsplus/autodiff.hpp"
#include "qtsplus/csv.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/harness/workload.hpp"
#include "qtsplus/io.hpp"
#include "qtsplus/objective.hpp"
#include "qtsplus/rng.hpp"
#include "qtsplus/selector.hpp"

namespace qtsplus::harness {

struct OptimizerConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double max_grad_norm = 1.0;
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 4;
  std::size_t batch_size = 4;

  void validate() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) fail(ErrorKind::parameter, "learning_rate must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) fail(ErrorKind::parameter, "momentum must lie in [0, 1)");
    if (!(max_grad_norm > 0)) fail(ErrorKind::parameter, "max_grad_norm must be positive");
    if (steps_per_epoch == 0 || batch_size == 0) fail(ErrorKind::parameter, "steps_per_epoch and batch_size must be >= 1");
  }
};

struct TrajectoryRow {
  std::size_t epoch = 0;
  double loss = 0;
  double task_loss = 0;
  double mean_rho = 0;
  double mean_n = 0;

  friend bool operator==(const TrajectoryRow&, const TrajectoryRow&) = default;
};

struct TrainResult {
  SelectorModel model;
  std::vector<TrajectoryRow> trajectory;
  std::optional<DualState> dual;
};

// Raised when the loss or a gradient stops being finite. `dump` holds the
// trajectory so far and the offending step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string dump) : Error(ErrorKind::numeric, what), dump_(std::move(dump)) {}
  const std::string& dump() const noexcept { return dump_; }

 private:
  std::string dump_;
};

struct StepValue {
  double loss = 0;
  double task = 0;
  double rho = 0;
  std::size_t n = 0;
};

// One workload through the train-mode pipeline; gradients are added into
// `grads` (same order as named_tensors).
inline StepValue accumulate_step(const SelectorModel& model, const Workload& w, const PenaltyWeights& pen,
                                 const std::optional<DualState>& dual, Rng& rng, std::vector<Matrix>& grads) {
  ad::Tape tp;
  SelectOptions opt;
  opt.mode = Mode::train;
  opt.reencode = false;  // the task loss does not read z
  SelectTrace tr = select_forward(tp.constant(w.x), w.timestamps, tp.constant(w.q), model, opt, rng);
  const std::size_t m = w.x.rows();
  ad::Var mass = ad::scale(ad::sum(ad::gather_cols(tr.keep_prob, w.planted)),
                           1.0 / static_cast<double>(std::max<std::size_t>(1, w.planted.size())));
  ad::Var task = ad::scale(ad::log(ad::shift(mass, 1e-12)), -1.0);
  ad::Var loss = total_loss(task, tr.rho, m, model.n_max(), pen, dual);
  tp.backward(loss);
  const auto params = named_tensors(model);
  for (std::size_t k = 0; k < params.size(); ++k) grads[k] += tp.grad_of(*params[k].second);
  return {loss.scalar(), task.scalar(), tr.rho.scalar(), tr.indices.size()};
}

inline double mean_rho(const SelectorModel& model, const WorkloadSpec& spec, std::size_t count, std::uint64_t stream) {
  double s = 0;
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng = derive_rng(spec.seed ^ stream, k);
    const Workload w = generate_workload(spec, rng);
    s += select(w.x, w.timestamps, w.q, model, Mode::infer, rng).diagnostics.rho;
  }
  return s / static_cast<double>(count);
}

inline const csv::Row& trajectory_header() {
  static const csv::Row h{"epoch", "loss", "task_loss", "mean_rho", "mean_n"};
  return h;
}

inline std::string emit_trajectory_csv(const std::vector<TrajectoryRow>& rows) {
  std::vector<csv::Row> out;
  for (const auto& r : rows) {
    out.push_back({std::to_string(r.epoch), io::format_double(r.loss), io::format_double(r.task_loss),
                   io::format_double(r.mean_rho), io::format_double(r.mean_n)});
  }
  return csv::write(trajectory_header(), out);
}

inline std::vector<TrajectoryRow> parse_trajectory_csv(std::string_view text) {
  std::vector<TrajectoryRow> out;
  for (const auto& row : csv::parse_with_header(text, trajectory_header())) {
    out.push_back({csv::to_count(row[0]), csv::to_double(row[1]), csv::to_double(row[2]), csv::to_double(row[3]),
                   csv::to_double(row[4])});
  }
  return out;
}

inline TrainResult train_desk_scale(const WorkloadSpec& spec, const SelectorModel& initial, const OptimizerConfig& opt,
                                    const PenaltyWeights& pen, std::optional<DualState> dual = std::nullopt) {
  spec.validate();
  opt.validate();
  pen.validate();
  initial.validate();
  TrainResult res;
  res.model = initial;
  auto params = named_tensors(res.model);
  std::vector<Matrix> velocity;
  for (const auto& [name, p] : params) velocity.emplace_back(p->rows(), p->cols());

  std::size_t sample = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    TrajectoryRow row;
    row.epoch = epoch;
    for (std::size_t step = 0; step < opt.steps_per_epoch; ++step) {
      std::vector<Matrix> grads;
      for (const auto& [name, p] : params) grads.emplace_back(p->rows(), p->cols());
      for (std::size_t b = 0; b < opt.batch_size; ++b, ++sample) {
        Rng rng = derive_rng(spec.seed, sample);
        const Workload w = generate_workload(spec, rng);
        const StepValue v = accumulate_step(res.model, w, pen, dual, rng, grads);
        if (!std::isfinite(v.loss)) {
          std::string dump = emit_trajectory_csv(res.trajectory);
          dump += "diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(step) + " sample " +
                  std::to_string(sample) + ": loss=" + io::format_double(v.loss) + " task=" + io::format_double(v.task) +
                  " rho=" + io::format_double(v.rho) + "\n";
          throw DivergenceError("training loss became non-finite", dump);
        }
        row.loss += v.loss;
        row.task_loss += v.task;
        row.mean_rho += v.rho;
        row.mean_n += static_cast<double>(v.n);
        if (dual) *dual = dual_ascent(*dual, v.rho, w.x.rows());
      }
      double norm2 = 0;
      for (auto& g : grads) {
        for (auto& e : g.data()) {
          e /= static_cast<double>(opt.batch_size);
          norm2 += e * e;
        }
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) {
        std::string dump = emit_trajectory_csv(res.trajectory);
        dump += "non-finite gradient at epoch " + std::to_string(epoch) + " step " + std::to_string(step) + "\n";
        for (std::size_t k = 0; k < params.size(); ++k) {
          if (!grads[k].all_finite()) dump += "  " + params[k].first + "\n";
        }
        throw DivergenceError("gradient became non-finite", dump);
      }
      const double clip = norm > opt.max_grad_norm ? opt.max_grad_norm / norm : 1.0;
      if (opt.learning_rate == 0) continue;
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& v = velocity[k].data();
        auto& w = params[k].second->data();
        const auto& g = grads[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = opt.momentum * v[i] + clip * g[i];
          w[i] -= opt.learning_rate * v[i];
        }
      }
    }
    const double cnt = static_cast<double>(opt.steps_per_epoch * opt.batch_size);
    row.loss /= cnt;
    row.task_loss /= cnt;
    row.mean_rho /= cnt;
    row.mean_n /= cnt;
    res.trajectory.push_back(row);
  }
  res.dual = dual;
  return res;
}

}  // namespace qtsplus::harness
