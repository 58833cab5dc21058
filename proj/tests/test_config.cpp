// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "qtsplus/config.hpp"

using namespace qtsplus;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::parse;
}

}  // namespace

TEST(RunConfig, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.n_max, 256u);
  EXPECT_DOUBLE_EQ(c.rho_min, 0.05);
  EXPECT_DOUBLE_EQ(c.rho_max, 0.5);
  EXPECT_DOUBLE_EQ(c.tau_s, 0.5);
  EXPECT_DOUBLE_EQ(c.lambda_t, 0.1);
  EXPECT_DOUBLE_EQ(c.lambda_m, 0.17);
  EXPECT_DOUBLE_EQ(c.lambda_s, 0.05);
  EXPECT_EQ(c.newton_iters, 6u);
  EXPECT_DOUBLE_EQ(c.residual_tol, 1e-6);
  EXPECT_NO_THROW(validate(c));
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  const RunConfig c = parse_run_config("# header\n  rho_max = 0.4  # inline\n\nmode=train\nidentity_scoring = true\n");
  EXPECT_DOUBLE_EQ(c.rho_max, 0.4);
  EXPECT_EQ(c.mode, Mode::train);
  EXPECT_TRUE(c.identity_scoring);
}

TEST(RunConfig, UnknownKeyIsSchemaError) {
  EXPECT_EQ(kind_of([] { (void)parse_run_config("rho_maxx = 0.4\n"); }), ErrorKind::schema);
}

TEST(RunConfig, BadValuesAreSchemaErrors) {
  for (const char* text : {"rho_max = abc\n", "n_max = -3\n", "n_max = 2.5\n", "mode = fast\n", "precision = 16\n",
                           "identity_scoring = maybe\n", "tau_s = inf\n", "no equals sign\n", " = 3\n"}) {
    EXPECT_EQ(kind_of([&] { (void)parse_run_config(text); }), ErrorKind::schema) << text;
  }
}

TEST(RunConfig, CrossFieldChecksAreSchemaErrors) {
  for (const char* text : {"rho_min = 0.6\n", "heads = 3\n", "tau_s = 0\n", "query_len = 0\n"}) {
    const RunConfig c = parse_run_config(text);
    EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::schema) << text;
  }
}

TEST(RunConfig, FormatParseRoundTrip) {
  RunConfig c;
  c.rho_bar = 0.123456789012345678;
  c.seed = 987654321012345ull;
  c.mode = Mode::train;
  c.time_encoding = false;
  c.dual_target = 37.5;
  c.precision = 32;
  const std::string text = format_run_config(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(format_run_config(back), text);
  EXPECT_EQ(back.rho_bar, c.rho_bar);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.precision, 32u);
  EXPECT_FALSE(back.time_encoding);
}

TEST(RunConfig, HelpListsEveryKeyOnce) {
  const std::string help = schema_help();
  std::set<std::string> names;
  for (const auto& k : config_schema()) {
    EXPECT_TRUE(names.insert(k.name).second) << k.name;
    EXPECT_NE(help.find("  " + k.name + " = "), std::string::npos) << k.name;
  }
  EXPECT_GE(names.size(), 30u);
}

TEST(RunConfig, MappingsCarryFields) {
  const RunConfig c = parse_run_config("d = 8\nheads = 4\ndual_target = 12\nframes = 3\ntokens_per_frame = 5\n");
  const ModelConfig m = model_config(c);
  EXPECT_EQ(m.d, 8u);
  EXPECT_EQ(m.heads, 4u);
  ASSERT_TRUE(dual_state(c).has_value());
  EXPECT_DOUBLE_EQ(dual_state(c)->n_bar, 12.0);
  EXPECT_FALSE(dual_state(RunConfig{}).has_value());
  EXPECT_EQ(workload_spec(c).m(), 15u);
}
