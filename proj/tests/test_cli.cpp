// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "qtsplus/io.hpp"
#include "qtsplus/serialization.hpp"

using namespace qtsplus;
namespace fs = std::filesystem;

namespace {

const std::string kCli = QTSPLUS_CLI_PATH;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / ("qtsplus_cli_log_" + std::to_string(::getpid()));
  const std::string cmd = "'" + kCli + "' " + args + " > '" + log.string() + "' 2>&1";
  const int st = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.out = fs::exists(log) ? io::read_file(log) : "";
  fs::remove(log);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("qtsplus_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return "'" + (dir / name).string() + "'"; }

  const std::string small = "--set frames=4 --set tokens_per_frame=16 --set d=8 --set query_len=4 --set planted=6 "
                            "--set budget_hidden=16 --set n_max=32";

  void make_workload() {
    const CliRun r = run("workload " + small + " --out-dir " + p(""));
    ASSERT_EQ(r.code, 0) << r.out;
  }
  std::string select_args(const std::string& tag, const std::string& extra = "") const {
    return "select " + small + " --x " + p("x.qtn") + " --q " + p("q.qtn") + " --timestamps " + p("timestamps.qtn") +
           " --out-z " + p(tag + "z.qtn") + " --out-indices " + p(tag + "idx.txt") + " --out-diag " +
           p(tag + "diag.json") + " " + extra;
  }
};

}  // namespace

TEST_F(Cli, SelectWritesConsistentOutputsAndIsReproducible) {
  make_workload();
  const CliRun a = run(select_args("a_"));
  ASSERT_EQ(a.code, 0) << a.out;
  const CliRun b = run(select_args("b_"));
  ASSERT_EQ(b.code, 0) << b.out;
  for (const char* f : {"z.qtn", "idx.txt", "diag.json"}) {
    EXPECT_EQ(io::read_file(dir / (std::string("a_") + f)), io::read_file(dir / (std::string("b_") + f))) << f;
  }
  std::istringstream in(io::read_file(dir / "a_idx.txt"));
  std::vector<std::size_t> idx;
  for (std::size_t v; in >> v;) idx.push_back(v);
  ASSERT_FALSE(idx.empty());
  for (std::size_t k = 1; k < idx.size(); ++k) EXPECT_LT(idx[k - 1], idx[k]);
  EXPECT_LT(idx.back(), 64u);
  const Matrix z = read_tensor(dir / "a_z.qtn");
  EXPECT_EQ(z.rows(), idx.size());
  EXPECT_EQ(z.cols(), 8u);
  const std::string diag = io::read_file(dir / "a_diag.json");
  EXPECT_NE(diag.find("\"n\":" + std::to_string(idx.size())), std::string::npos) << diag;

  const CliRun t = run(select_args("t_", "--mode train"));
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_NE(io::read_file(dir / "t_diag.json").find("\"mode\":\"train\""), std::string::npos);
}

TEST_F(Cli, SelectWithSavedWeightsMatchesConfigInit) {
  make_workload();
  const CliRun tr = run("train " + small + " --set epochs=1 --set steps_per_epoch=1 --set batch_size=1 "
                     "--set learning_rate=0 --out-weights " + p("w") + " --out-trajectory " + p("traj.csv"));
  ASSERT_EQ(tr.code, 0) << tr.out;
  ASSERT_EQ(run(select_args("a_")).code, 0);
  const CliRun w = run(select_args("w_", "--weights " + p("w")));
  ASSERT_EQ(w.code, 0) << w.out;
  EXPECT_EQ(io::read_file(dir / "a_z.qtn"), io::read_file(dir / "w_z.qtn"));
  const CliRun wi = run("weights-inspect --weights " + p("w"));
  EXPECT_EQ(wi.code, 0) << wi.out;
  EXPECT_NE(wi.out.find("30 tensors"), std::string::npos) << wi.out;
}

TEST_F(Cli, MissingWeightsExit4WithoutOutputs) {
  make_workload();
  const CliRun r = run(select_args("m_", "--weights " + p("nowhere")));
  EXPECT_EQ(r.code, 4) << r.out;
  for (const char* f : {"m_z.qtn", "m_idx.txt", "m_diag.json"}) EXPECT_FALSE(fs::exists(dir / f)) << f;
}

TEST_F(Cli, MalformedTensorExit2) {
  make_workload();
  io::write_bytes(dir / "x.qtn", "not a tensor");
  const CliRun r = run(select_args("e_"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_FALSE(fs::exists(dir / "e_z.qtn"));
}

TEST_F(Cli, CorruptWeightsExit2) {
  const CliRun tr = run("train " + small + " --set epochs=1 --set steps_per_epoch=1 --set batch_size=1 --out-weights " +
                     p("w") + " --out-trajectory " + p("traj.csv"));
  ASSERT_EQ(tr.code, 0) << tr.out;
  const fs::path victim = dir / "w" / "budget.out.w.qtn";
  std::string bytes = io::read_file(victim);
  bytes.back() ^= 1;
  io::write_bytes(victim, bytes);
  const CliRun r = run("weights-inspect --weights " + p("w"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("budget.out.w"), std::string::npos) << r.out;
}

TEST_F(Cli, ShapeMismatchExit3) {
  make_workload();
  write_tensor(dir / "q.qtn", Matrix(4, 5, 1.0));
  EXPECT_EQ(run(select_args("s_")).code, 3);
  make_workload();
  write_tensor(dir / "timestamps.qtn", Matrix(1, 7));
  EXPECT_EQ(run(select_args("s_")).code, 3);
}

TEST_F(Cli, SchemaErrorsExit6) {
  make_workload();
  EXPECT_EQ(run(select_args("c_", "--set not_a_key=1")).code, 6);
  EXPECT_EQ(run(select_args("c_", "--set rho_max=high")).code, 6);
  io::write_bytes(dir / "bad.cfg", "rho_min = 0.7\n");
  EXPECT_EQ(run(select_args("c_", "--config " + p("bad.cfg"))).code, 6);
  EXPECT_EQ(run(select_args("c_", "--config " + p("absent.cfg"))).code, 4);
}

TEST_F(Cli, BenchWritesTwoRowsPerFrameCount) {
  const CliRun r = run("bench " + small + " --frames 1,2,4,8 --out " + p("bench.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(io::read_file(dir / "bench.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) lines += !line.empty();
  EXPECT_EQ(lines, 9u);  // header + 8
  EXPECT_EQ(run("bench " + small + " --frames 2,0 --out " + p("b2.csv")).code, 2);
  EXPECT_FALSE(fs::exists(dir / "b2.csv"));
}

TEST_F(Cli, DiagReportsUndefinedForConstantColumn) {
  std::string text = "sq_mean,log_m,r_max,entropy,rho,t,n,m\n";
  for (int i = 0; i < 4; ++i) {
    text += std::to_string(0.1 * i) + "," + std::to_string(4.0 + i) + ",0.5,0.7,0.25," + std::to_string(-0.1 * i) +
            ",10,100\n";
  }
  io::write_bytes(dir / "recs.csv", text);
  const CliRun r = run("diag --records " + p("recs.csv") + " --out " + p("corr.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string out = io::read_file(dir / "corr.csv");
  EXPECT_NE(out.find("undefined"), std::string::npos) << out;
}

TEST_F(Cli, AblateRunsAllVariants) {
  const CliRun r = run("ablate " + small + " --variant all --trials 3 --out " + p("ab.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("matched n"), std::string::npos);
  std::istringstream in(io::read_file(dir / "ab.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) lines += !line.empty();
  EXPECT_EQ(lines, 10u);
}

TEST_F(Cli, HelpListsConfigKeys) {
  const CliRun r = run("select --help");
  EXPECT_EQ(r.code, 0);
  for (const char* key : {"n_max", "rho_min", "rho_max", "tau_s", "lambda_t", "lambda_m", "lambda_s", "newton_iters",
                          "residual_tol", "seed"}) {
    EXPECT_NE(r.out.find(std::string("  ") + key + " = "), std::string::npos) << key;
  }
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("").code, 1);
}
