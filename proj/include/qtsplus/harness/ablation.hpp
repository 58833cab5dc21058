// SPDX-License-Identifier: Apache-2.0
#pragma once

// UNIF / nREENC / QTS comparison on planted workloads.
// UNIF keeps a uniform stride of the same size n the QTS budget picked for
// that instance (matched n).

#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "qtsplus/csv.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/harness/workload.hpp"
#include "qtsplus/io.hpp"
#include "qtsplus/rng.hpp"
#include "qtsplus/selector.hpp"

namespace qtsplus::harness {

enum class AblationVariant { unif, nreenc, qts };

inline const char* to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::unif: return "UNIF";
    case AblationVariant::nreenc: return "nREENC";
    case AblationVariant::qts: return "QTS";
  }
  return "?";
}

inline AblationVariant parse_variant(std::string_view s) {
  if (s == "UNIF" || s == "unif") return AblationVariant::unif;
  if (s == "nREENC" || s == "nreenc") return AblationVariant::nreenc;
  if (s == "QTS" || s == "qts") return AblationVariant::qts;
  fail(ErrorKind::parse, "unknown ablation variant '" + std::string(s) + "'");
}

// n indices floor((k + u) M / n), k = 0..n-1, for an offset u in [0, 1).
inline std::vector<std::size_t> uniform_stride(std::size_t m, std::size_t n, double offset) {
  if (n == 0 || n > m) fail(ErrorKind::parameter, "uniform_stride needs 1 <= n <= M");
  std::vector<std::size_t> idx(n);
  const double step = static_cast<double>(m) / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = std::min(m - 1, static_cast<std::size_t>((static_cast<double>(k) + offset) * step));
  }
  return idx;
}

struct AblationRecord {
  AblationVariant variant = AblationVariant::qts;
  std::size_t trial = 0;
  double recall = 0;
  double rho = 0;
  std::size_t n = 0;
  double ms = 0;

  friend bool operator==(const AblationRecord&, const AblationRecord&) = default;
};

struct AblationSummary {
  AblationVariant variant = AblationVariant::qts;
  std::size_t trials = 0;
  double mean_recall = 0;
  double mean_rho = 0;
  double mean_n = 0;
  double mean_ms = 0;
  // Uniform-stride reference: sum over trials of n/M, and the standard error
  // of the mean recall under the hypergeometric model.
  double expected_uniform_recall = 0;
  double uniform_sigma = 0;
};

struct AblationRun {
  std::vector<AblationRecord> records;
  AblationSummary summary;
};

inline AblationRun run_ablation(AblationVariant variant, const WorkloadSpec& spec, const SelectorModel& model,
                                std::size_t trials) {
  spec.validate();
  if (trials == 0) fail(ErrorKind::empty_input, "ablation needs at least one trial");
  AblationRun run;
  run.summary.variant = variant;
  run.summary.trials = trials;
  double var_sum = 0;
  const double mm = static_cast<double>(spec.m());
  const double kk = static_cast<double>(spec.planted);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng = derive_rng(spec.seed, trial);
    const Workload w = generate_workload(spec, rng);
    const auto t0 = std::chrono::steady_clock::now();
    SelectOptions opt;
    opt.mode = Mode::infer;
    opt.reencode = variant == AblationVariant::qts;
    const SelectionResult res = select(w.x, w.timestamps, w.q, model, opt, rng);
    AblationRecord rec;
    rec.variant = variant;
    rec.trial = trial;
    rec.rho = res.diagnostics.rho;
    rec.n = res.indices.size();
    if (variant == AblationVariant::unif) {
      const auto idx = uniform_stride(spec.m(), rec.n, uniform_open01(rng) * (1.0 - 1e-12));
      rec.recall = recall(idx, w.planted);
    } else {
      rec.recall = recall(res.indices, w.planted);
    }
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const double f = static_cast<double>(rec.n) / mm;
    run.summary.expected_uniform_recall += f;
    if (spec.planted > 0 && spec.m() > 1) var_sum += f * (1 - f) * (mm - kk) / ((mm - 1) * kk);
    run.records.push_back(rec);
  }
  const double T = static_cast<double>(trials);
  for (const auto& r : run.records) {
    run.summary.mean_recall += r.recall;
    run.summary.mean_rho += r.rho;
    run.summary.mean_n += static_cast<double>(r.n);
    run.summary.mean_ms += r.ms;
  }
  run.summary.mean_recall /= T;
  run.summary.mean_rho /= T;
  run.summary.mean_n /= T;
  run.summary.mean_ms /= T;
  run.summary.expected_uniform_recall /= T;
  run.summary.uniform_sigma = std::sqrt(var_sum) / T;
  return run;
}

inline const csv::Row& ablation_header() {
  static const csv::Row h{"variant", "trial", "recall", "rho", "n", "ms"};
  return h;
}

inline std::string emit_ablation_csv(const std::vector<AblationRecord>& recs) {
  std::vector<csv::Row> rows;
  rows.reserve(recs.size());
  for (const auto& r : recs) {
    rows.push_back({to_string(r.variant), std::to_string(r.trial), io::format_double(r.recall), io::format_double(r.rho),
                    std::to_string(r.n), io::format_double(r.ms)});
  }
  return csv::write(ablation_header(), rows);
}

inline std::vector<AblationRecord> parse_ablation_csv(std::string_view text) {
  std::vector<AblationRecord> out;
  for (const auto& row : csv::parse_with_header(text, ablation_header())) {
    AblationRecord r;
    r.variant = parse_variant(row[0]);
    r.trial = csv::to_count(row[1]);
    r.recall = csv::to_double(row[2]);
    r.rho = csv::to_double(row[3]);
    r.n = csv::to_count(row[4]);
    r.ms = csv::to_double(row[5]);
    out.push_back(r);
  }
  return out;
}

}  // namespace qtsplus::harness
