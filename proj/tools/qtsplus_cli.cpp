// SPDX-License-Identifier: Apache-2.0
//
// qtsplus: command-line front end.
//
//   qtsplus select  --x X.qtn --q Q.qtn --timestamps T.qtn --out-z Z.qtn --out-indices I.txt --out-diag D.jsonl
//   qtsplus train   --out-weights DIR --out-trajectory traj.csv
//   qtsplus bench   --frames 60,120,240,480 --out bench.csv
//   qtsplus ablate  --variant all --out ablation.csv
//   qtsplus diag    --records D.jsonl --out corr.csv
//   qtsplus weights-inspect --weights DIR
//   qtsplus workload --out-dir DIR
//
// Exit codes: 0 ok, 2 input parse, 3 shape, 4 missing resource,
// 5 numeric failure, 6 config schema, 1 usage.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "qtsplus/qtsplus.hpp"

namespace fs = std::filesystem;
using namespace qtsplus;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse:
    case ErrorKind::checksum:
    case ErrorKind::input:
    case ErrorKind::empty_input: return 2;
    case ErrorKind::shape: return 3;
    case ErrorKind::missing: return 4;
    case ErrorKind::numeric:
    case ErrorKind::oracle: return 5;
    case ErrorKind::schema:
    case ErrorKind::configuration:
    case ErrorKind::parameter: return 6;
  }
  return 1;
}

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.file, "configuration file (key = value lines)");
  cmd->add_option("--set", args.overrides, "override one key, e.g. --set n_max=512")->take_all();
  cmd->footer(schema_help());
}

RunConfig load_config(const ConfigArgs& args) {
  RunConfig cfg;
  if (!args.file.empty()) {
    std::string text;
    try {
      text = io::read_file(args.file);
    } catch (const Error&) {
      fail(ErrorKind::missing, "config file not found: " + args.file);
    }
    cfg = parse_run_config(text);
  }
  for (const auto& o : args.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) fail(ErrorKind::schema, "--set expects key=value, got '" + o + "'");
    kv::Entry e{std::string(kv::trim(o.substr(0, eq))), std::string(kv::trim(o.substr(eq + 1))), 0};
    set_config_key(cfg, e);
  }
  validate(cfg);
  return cfg;
}

// Weights from a directory, or a freshly initialised model from the config.
SelectorModel model_for(const RunConfig& cfg, const std::string& weights_dir) {
  if (weights_dir.empty()) return SelectorModel::create(model_config(cfg));
  SelectorModel m = load_weights(weights_dir);
  // gate settings are run-time choices
  m.gate.tau_s = cfg.tau_s;
  m.gate.newton_iters = cfg.newton_iters;
  m.gate.residual_tol = cfg.residual_tol;
  m.gate.seed = cfg.seed;
  return m;
}

std::vector<double> read_vector(const std::string& path) {
  const Matrix m = read_tensor(path);
  if (m.rows() != 1 && m.cols() != 1) {
    fail(ErrorKind::shape, path + ": expected a vector, got " + m.shape_string());
  }
  return m.data();
}

nlohmann::json diagnostics_json(const Diagnostics& dg, std::uint64_t seed) {
  const DiagnosticsRecord rec = dg.record();
  nlohmann::json j = harness::record_to_json(rec);
  j["mode"] = to_string(dg.mode);
  j["budget_n"] = dg.budget_n;
  j["target_count"] = dg.target_count;
  j["threshold_residual"] = dg.threshold_residual;
  j["threshold_bisection"] = dg.threshold_bisection;
  j["r_min"] = dg.r_min;
  j["r_mean"] = dg.r_mean;
  j["fallback"] = dg.fallback;
  j["clamped"] = dg.clamped;
  j["seed"] = seed;
  return j;
}

std::string indices_text(const std::vector<std::size_t>& idx) {
  std::string out;
  for (auto i : idx) out += std::to_string(i) + "\n";
  return out;
}

std::vector<std::size_t> parse_frames(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    kv::Entry e{"frames", std::string(kv::trim(std::string_view(s).substr(pos, comma - pos))), 0};
    out.push_back(static_cast<std::size_t>(kv::to_unsigned(e, ErrorKind::parse)));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-aware token selection with an adaptive budget"};
  app.require_subcommand(1);
  app.footer(schema_help());

  // select
  ConfigArgs sel_cfg;
  std::string sel_x, sel_q, sel_ts, sel_weights, sel_mode, sel_z, sel_idx, sel_diag;
  auto* sel = app.add_subcommand("select", "select tokens from tensor files");
  add_config_options(sel, sel_cfg);
  sel->add_option("--x", sel_x, "visual tokens, QTN1 M x d")->required();
  sel->add_option("--q", sel_q, "query tokens, QTN1 L x d")->required();
  sel->add_option("--timestamps", sel_ts, "timestamps, QTN1 vector of length M")->required();
  sel->add_option("--weights", sel_weights, "weights directory (default: initialise from config seed)");
  sel->add_option("--mode", sel_mode, "train | infer (overrides config)");
  sel->add_option("--out-z", sel_z, "kept tokens, QTN1 n x d")->required();
  sel->add_option("--out-indices", sel_idx, "kept indices, one per line")->required();
  sel->add_option("--out-diag", sel_diag, "diagnostics, one JSON line")->required();

  // train
  ConfigArgs tr_cfg;
  std::string tr_init, tr_out, tr_traj;
  auto* tr = app.add_subcommand("train", "desk-scale training on planted workloads");
  add_config_options(tr, tr_cfg);
  tr->add_option("--weights", tr_init, "initial weights directory");
  tr->add_option("--out-weights", tr_out, "output weights directory")->required();
  tr->add_option("--out-trajectory", tr_traj, "per-epoch CSV")->required();

  // bench
  ConfigArgs be_cfg;
  std::string be_frames = "60,120,240,480", be_weights, be_out;
  auto* be = app.add_subcommand("bench", "frame-count scaling benchmark against a dense mock downstream");
  add_config_options(be, be_cfg);
  be->add_option("--frames", be_frames, "comma-separated frame counts")->capture_default_str();
  be->add_option("--weights", be_weights, "weights directory");
  be->add_option("--out", be_out, "CSV output")->required();

  // ablate
  ConfigArgs ab_cfg;
  std::string ab_variant = "all", ab_weights, ab_out;
  std::optional<std::size_t> ab_trials;
  auto* ab = app.add_subcommand("ablate", "UNIF / nREENC / QTS on planted workloads");
  add_config_options(ab, ab_cfg);
  ab->add_option("--variant", ab_variant, "UNIF | nREENC | QTS | all")->capture_default_str();
  ab->add_option("--trials", ab_trials, "trials (overrides config)");
  ab->add_option("--weights", ab_weights, "weights directory");
  ab->add_option("--out", ab_out, "CSV output")->required();

  // diag
  std::string dg_records, dg_out;
  auto* dg = app.add_subcommand("diag", "correlation report over diagnostics records (CSV or JSON lines)");
  dg->add_option("--records", dg_records, "records file")->required();
  dg->add_option("--out", dg_out, "CSV output")->required();

  // weights-inspect
  std::string wi_dir;
  auto* wi = app.add_subcommand("weights-inspect", "verify and list a weights directory");
  wi->add_option("--weights", wi_dir, "weights directory")->required();

  // workload
  ConfigArgs wl_cfg;
  std::string wl_out;
  std::size_t wl_index = 0;
  auto* wl = app.add_subcommand("workload", "write one planted workload as tensor files");
  add_config_options(wl, wl_cfg);
  wl->add_option("--index", wl_index, "workload index within the seeded stream")->capture_default_str();
  wl->add_option("--out-dir", wl_out, "existing output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*sel) {
      RunConfig cfg = load_config(sel_cfg);
      if (!sel_mode.empty()) set_config_key(cfg, kv::Entry{"mode", sel_mode, 0});
      const SelectorModel model = model_for(cfg, sel_weights);
      const Matrix x = read_tensor(sel_x);
      const Matrix q = read_tensor(sel_q);
      const std::vector<double> ts = read_vector(sel_ts);
      Rng rng = derive_rng(cfg.seed, 1);
      const SelectionResult res = select(x, ts, q, model, cfg.mode, rng);
      const std::string diag = diagnostics_json(res.diagnostics, cfg.seed).dump() + "\n";
      io::AtomicBatch batch;
      batch.add(sel_z, encode_tensor(res.z));
      batch.add(sel_idx, indices_text(res.indices));
      batch.add(sel_diag, diag);
      batch.commit();
      std::cout << diag;
    } else if (*tr) {
      const RunConfig cfg = load_config(tr_cfg);
      const SelectorModel init = model_for(cfg, tr_init);
      harness::TrainResult out;
      try {
        out = harness::train_desk_scale(workload_spec(cfg), init, optimizer_config(cfg), penalty_weights(cfg),
                                        dual_state(cfg));
      } catch (const harness::DivergenceError& e) {
        std::cerr << e.dump();
        throw;
      }
      io::write_file_atomic(tr_traj, harness::emit_trajectory_csv(out.trajectory));
      save_weights(out.model, tr_out);
      const auto& last = out.trajectory.empty() ? harness::TrajectoryRow{} : out.trajectory.back();
      std::cout << "epochs " << out.trajectory.size() << " final loss " << last.loss << " mean rho " << last.mean_rho
                << "\n";
    } else if (*be) {
      const RunConfig cfg = load_config(be_cfg);
      const SelectorModel model = model_for(cfg, be_weights);
      harness::BenchSpec spec{workload_spec(cfg), cfg.precision};
      const auto recs = harness::bench_scaling(parse_frames(be_frames), model, spec);
      io::write_file_atomic(be_out, harness::emit_bench_csv(recs));
      std::cout << recs.size() << " rows written to " << be_out << "\n";
    } else if (*ab) {
      RunConfig cfg = load_config(ab_cfg);
      if (ab_trials) cfg.trials = *ab_trials;
      const SelectorModel model = model_for(cfg, ab_weights);
      std::vector<harness::AblationVariant> variants;
      if (ab_variant == "all") {
        variants = {harness::AblationVariant::unif, harness::AblationVariant::nreenc, harness::AblationVariant::qts};
      } else {
        variants = {harness::parse_variant(ab_variant)};
      }
      std::vector<harness::AblationRecord> all;
      for (auto v : variants) {
        const auto run = harness::run_ablation(v, workload_spec(cfg), model, cfg.trials);
        all.insert(all.end(), run.records.begin(), run.records.end());
        std::cerr << to_string(v) << ": mean recall " << run.summary.mean_recall << ", mean n " << run.summary.mean_n
                  << ", mean rho " << run.summary.mean_rho << "\n";
        if (v == harness::AblationVariant::unif) {
          std::cerr << "UNIF keeps a uniform stride of the same n the selector chose per trial (matched n); "
                    << "expected recall " << run.summary.expected_uniform_recall << " +/- "
                    << run.summary.uniform_sigma << "\n";
        }
      }
      io::write_file_atomic(ab_out, harness::emit_ablation_csv(all));
    } else if (*dg) {
      const auto recs = harness::parse_records(io::read_file(dg_records));
      const auto rows = harness::correlation_report(recs);
      io::write_file_atomic(dg_out, harness::emit_correlation_csv(rows));
      std::cout << harness::emit_correlation_csv(rows);
    } else if (*wi) {
      const Manifest man = read_manifest(wi_dir);
      const SelectorModel model = load_weights(wi_dir);
      std::size_t params = 0;
      for (const auto& e : man) {
        std::cout << e.name << " " << e.rows << "x" << e.cols << " " << hex32(e.checksum) << "\n";
        params += e.rows * e.cols;
      }
      std::cout << man.size() << " tensors, " << params << " parameters, d=" << model.d()
                << " heads=" << model.config.heads << " n_max=" << model.n_max() << "\n";
    } else if (*wl) {
      const RunConfig cfg = load_config(wl_cfg);
      Rng rng = derive_rng(cfg.seed, wl_index);
      const harness::Workload w = harness::generate_workload(workload_spec(cfg), rng);
      const fs::path dir = wl_out;
      if (!fs::is_directory(dir)) fail(ErrorKind::missing, "output directory does not exist: " + wl_out);
      io::AtomicBatch batch;
      batch.add(dir / "x.qtn", encode_tensor(w.x));
      batch.add(dir / "q.qtn", encode_tensor(w.q));
      batch.add(dir / "timestamps.qtn", encode_tensor(Matrix::row_vector(w.timestamps)));
      batch.add(dir / "planted.txt", indices_text(w.planted));
      batch.commit();
    }
  } catch (const Error& e) {
    std::cerr << "qtsplus: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "qtsplus: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
