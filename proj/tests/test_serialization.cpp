// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "qtsplus/io.hpp"
#include "qtsplus/serialization.hpp"

using namespace qtsplus;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.n_max = 32;
  c.budget_hidden = 6;
  c.seed = 77;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("qtsplus_ser_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Error error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error raised";
  return Error(ErrorKind::parse, "none");
}

}  // namespace

TEST(Tensor, EncodeDecodeIsBitExact) {
  Matrix m(3, 2);
  const double vals[] = {0.0, -0.0, 1e-310, std::numeric_limits<double>::max(), -1.0 / 3.0, 6.02214076e23};
  for (std::size_t i = 0; i < 6; ++i) m[i] = vals[i];
  const std::string bytes = encode_tensor(m);
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 16 + 48);
  EXPECT_EQ(bytes.substr(0, 4), "QTN1");
  const Matrix back = decode_tensor(bytes);
  ASSERT_TRUE(back.same_shape(m));
  EXPECT_EQ(std::memcmp(back.data().data(), m.data().data(), 48), 0);
  EXPECT_TRUE(std::signbit(back[1]));
}

TEST(Tensor, RankOneLoadsAsRow) {
  std::string bytes = "QTN1";
  const std::uint32_t ver = 1, rank = 1;
  const std::uint64_t len = 3;
  bytes.append(reinterpret_cast<const char*>(&ver), 4);
  bytes.append(reinterpret_cast<const char*>(&rank), 4);
  bytes.append(reinterpret_cast<const char*>(&len), 8);
  for (double v : {1.0, 2.0, 3.0}) bytes.append(reinterpret_cast<const char*>(&v), 8);
  const Matrix m = decode_tensor(bytes);
  EXPECT_EQ(m.rows(), 1u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m[2], 3.0);
}

TEST(Tensor, MalformedHeadersReportOffsets) {
  const std::string good = encode_tensor(Matrix(2, 2, 1.0));
  struct Case {
    std::string bytes;
    std::string offset;
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  std::string bad_version = good;
  bad_version[4] = 9;
  std::string bad_rank = good;
  bad_rank[8] = 3;
  const Case cases[] = {{bad_magic, "offset 0"},
                        {bad_version, "offset 4"},
                        {bad_rank, "offset 8"},
                        {good.substr(0, 14), "offset 12"},
                        {good.substr(0, good.size() - 1), "offset " + std::to_string(good.size() - 1)},
                        {good + "x", "offset " + std::to_string(good.size())}};
  for (const auto& c : cases) {
    const Error e = error_of([&] { (void)decode_tensor(c.bytes); });
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find(c.offset), std::string::npos) << e.what();
  }
}

TEST(Checksum, KnownValue) {
  EXPECT_EQ(hex32(crc32_of("123456789")), "cbf43926");
  EXPECT_EQ(hex32(crc32_of("")), "00000000");
}

TEST(Manifest, FormatParseRoundTrip) {
  const Manifest man{{"a.b", 2, 3, 0xdeadbeef, "a.b.qtn"}, {"c", 1, 1, 0x1, "c.qtn"}};
  const std::string text = format_manifest(man);
  EXPECT_EQ(text, "a.b 2x3 deadbeef a.b.qtn\nc 1x1 00000001 c.qtn\n");
  EXPECT_EQ(parse_manifest(text), man);
  for (const char* bad : {"a 2x3 deadbeef\n", "a 2y3 deadbeef f\n", "a 2x3 xyz f\n", "a 2x3 deadbeef ../f\n",
                          "a 2x3 deadbeef f extra\n"}) {
    EXPECT_EQ(error_of([&] { (void)parse_manifest(bad); }).kind(), ErrorKind::parse) << bad;
  }
}

TEST(ModelConfigFile, RoundTripAndUnknownKey) {
  ModelConfig c = small_config();
  c.rho_max = 0.123456789;
  c.identity_scoring = true;
  const ModelConfig back = parse_model_config(format_model_config(c));
  EXPECT_EQ(format_model_config(back), format_model_config(c));
  EXPECT_EQ(error_of([] { (void)parse_model_config("bogus = 1\n"); }).kind(), ErrorKind::parse);
}

TEST(Weights, SaveLoadRoundTripIsBitExact) {
  TempDir tmp("rt");
  const SelectorModel model = SelectorModel::create(small_config());
  const Manifest man = save_weights(model, tmp.path);
  const auto tensors = named_tensors(model);
  ASSERT_EQ(man.size(), tensors.size());
  std::size_t scoring = 0, budget = 0, reenc = 0;
  for (const auto& e : man) {
    scoring += e.name.rfind("scoring.", 0) == 0;
    budget += e.name.rfind("budget.", 0) == 0;
    reenc += e.name.rfind("reencoder.", 0) == 0;
    EXPECT_TRUE(fs::exists(tmp.path / e.filename));
  }
  EXPECT_EQ(scoring, 4u);
  EXPECT_EQ(budget, 6u);
  EXPECT_EQ(reenc, 20u);
  const SelectorModel back = load_weights(tmp.path);
  const auto loaded = named_tensors(back);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    EXPECT_EQ(tensors[k].first, loaded[k].first);
    EXPECT_EQ(*tensors[k].second, *loaded[k].second) << tensors[k].first;
  }
  EXPECT_EQ(format_model_config(back.config), format_model_config(model.config));
}

TEST(Weights, CorruptByteIsChecksumErrorNamingTensor) {
  TempDir tmp("crc");
  const SelectorModel model = SelectorModel::create(small_config());
  const Manifest man = save_weights(model, tmp.path);
  const auto& victim = man[3];
  std::string bytes = io::read_file(tmp.path / victim.filename);
  bytes[bytes.size() - 3] ^= 0x10;
  io::write_bytes(tmp.path / victim.filename, bytes);
  const Error e = error_of([&] { (void)load_weights(tmp.path); });
  EXPECT_EQ(e.kind(), ErrorKind::checksum);
  EXPECT_NE(std::string(e.what()).find("'" + victim.name + "'"), std::string::npos) << e.what();
}

TEST(Weights, MissingPieces) {
  const SelectorModel model = SelectorModel::create(small_config());
  {
    TempDir tmp("nodir");
    EXPECT_EQ(error_of([&] { (void)load_weights(tmp.path); }).kind(), ErrorKind::missing);
  }
  {
    TempDir tmp("nofile");
    const Manifest man = save_weights(model, tmp.path);
    fs::remove(tmp.path / man[5].filename);
    const Error e = error_of([&] { (void)load_weights(tmp.path); });
    EXPECT_EQ(e.kind(), ErrorKind::missing);
    EXPECT_NE(std::string(e.what()).find(man[5].name), std::string::npos);
  }
  {
    TempDir tmp("noentry");
    Manifest man = save_weights(model, tmp.path);
    const std::string dropped = man[7].name;
    man.erase(man.begin() + 7);
    io::write_bytes(tmp.path / kManifestName, format_manifest(man));
    const Error e = error_of([&] { (void)load_weights(tmp.path); });
    EXPECT_EQ(e.kind(), ErrorKind::missing);
    EXPECT_NE(std::string(e.what()).find(dropped), std::string::npos);
  }
  {
    TempDir tmp("nomanifest");
    save_weights(model, tmp.path);
    fs::remove(tmp.path / kManifestName);
    EXPECT_EQ(error_of([&] { (void)load_weights(tmp.path); }).kind(), ErrorKind::missing);
  }
}

TEST(Weights, ShapeConflicts) {
  const SelectorModel model = SelectorModel::create(small_config());
  {
    TempDir tmp("shape_manifest");
    Manifest man = save_weights(model, tmp.path);
    man[0].rows += 1;
    io::write_bytes(tmp.path / kManifestName, format_manifest(man));
    EXPECT_EQ(error_of([&] { (void)load_weights(tmp.path); }).kind(), ErrorKind::shape);
  }
  {
    TempDir tmp("shape_file");
    Manifest man = save_weights(model, tmp.path);
    const std::string bytes = encode_tensor(Matrix(1, 2));
    io::write_bytes(tmp.path / man[0].filename, bytes);
    man[0].checksum = crc32_of(bytes);
    io::write_bytes(tmp.path / kManifestName, format_manifest(man));
    EXPECT_EQ(error_of([&] { (void)load_weights(tmp.path); }).kind(), ErrorKind::shape);
  }
  {
    TempDir tmp("shape_cfg");
    save_weights(model, tmp.path);
    ModelConfig other = small_config();
    other.d = 12;
    io::write_bytes(tmp.path / kModelConfigName, format_model_config(other));
    EXPECT_EQ(error_of([&] { (void)load_weights(tmp.path); }).kind(), ErrorKind::shape);
  }
  {
    TempDir tmp("extra");
    Manifest man = save_weights(model, tmp.path);
    man.push_back({"stray", 1, 1, 0, "stray.qtn"});
    io::write_bytes(tmp.path / kManifestName, format_manifest(man));
    EXPECT_EQ(error_of([&] { (void)load_weights(tmp.path); }).kind(), ErrorKind::shape);
  }
}
