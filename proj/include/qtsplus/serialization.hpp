// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tensor files and weight directories.
//
// Tensor file (little-endian):
//   "QTN1" | u32 version | u32 rank | u64 dims[rank] | f64 data (row-major)
// Weight directory: one tensor file per named tensor, `model.cfg` with the
// shape hyperparameters, and `manifest.txt` with lines
//   name shape checksum filename
// where shape is `RxC` and checksum is the crc32 of the tensor file, in hex.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qtsplus/error.hpp"
#include "qtsplus/io.hpp"
#include "qtsplus/keyvalue.hpp"
#include "qtsplus/matrix.hpp"
#include "qtsplus/selector.hpp"

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

namespace qtsplus {

inline constexpr char kTensorMagic[4] = {'Q', 'T', 'N', '1'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr const char* kManifestName = "manifest.txt";
inline constexpr const char* kModelConfigName = "model.cfg";

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& off, const std::string& what) {
  if (bytes.size() - off < sizeof(T)) {
    fail(ErrorKind::parse, what + ": truncated at byte offset " + std::to_string(off));
  }
  T v;
  std::memcpy(&v, bytes.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode_tensor(const Matrix& m) {
  std::string out;
  out.reserve(4 + 8 + 16 + m.size() * 8);
  out.append(kTensorMagic, 4);
  detail::put<std::uint32_t>(out, kTensorVersion);
  detail::put<std::uint32_t>(out, 2);
  detail::put<std::uint64_t>(out, m.rows());
  detail::put<std::uint64_t>(out, m.cols());
  for (double v : m.data()) detail::put<double>(out, v);
  return out;
}

// Rank-1 tensors load as a single row.
inline Matrix decode_tensor(std::string_view bytes, const std::string& what = "tensor") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    fail(ErrorKind::parse, what + ": bad magic at byte offset 0");
  }
  std::size_t off = 4;
  const auto version = detail::take<std::uint32_t>(bytes, off, what);
  if (version != kTensorVersion) {
    fail(ErrorKind::parse, what + ": unsupported version " + std::to_string(version) + " at byte offset 4");
  }
  const auto rank = detail::take<std::uint32_t>(bytes, off, what);
  if (rank != 1 && rank != 2) {
    fail(ErrorKind::parse, what + ": unsupported rank " + std::to_string(rank) + " at byte offset 8");
  }
  std::uint64_t dims[2] = {1, 1};
  for (std::uint32_t k = 0; k < rank; ++k) dims[2 - rank + k] = detail::take<std::uint64_t>(bytes, off, what);
  const std::uint64_t rows = dims[0], cols = dims[1];
  if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) {
    fail(ErrorKind::parse, what + ": implausible dimensions at byte offset 12");
  }
  const std::uint64_t count = rows * cols;
  const std::size_t expected = off + count * sizeof(double);
  if (bytes.size() != expected) {
    fail(ErrorKind::parse, what + ": payload size mismatch at byte offset " + std::to_string(std::min(bytes.size(), expected)) +
                               " (expected " + std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()) + ")");
  }
  Matrix m(rows, cols);
  if (count) std::memcpy(m.data().data(), bytes.data() + off, count * sizeof(double));
  return m;
}

inline void write_tensor(const std::filesystem::path& path, const Matrix& m) {
  io::write_file_atomic(path, encode_tensor(m));
}

inline Matrix read_tensor(const std::filesystem::path& path) {
  return decode_tensor(io::read_file(path), path.string());
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(c);
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

struct ManifestEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint32_t checksum = 0;
  std::string filename;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using Manifest = std::vector<ManifestEntry>;

inline std::string format_manifest(const Manifest& man) {
  std::string out;
  for (const auto& e : man) {
    out += e.name + " " + std::to_string(e.rows) + "x" + std::to_string(e.cols) + " " + hex32(e.checksum) + " " +
           e.filename + "\n";
  }
  return out;
}

inline Manifest parse_manifest(std::string_view text) {
  Manifest man;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (kv::trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string name, shape, sum, file, extra;
    const std::string where = "manifest line " + std::to_string(line_no);
    if (!(ls >> name >> shape >> sum >> file) || (ls >> extra)) fail(ErrorKind::parse, where + ": expected 4 fields");
    ManifestEntry e;
    e.name = name;
    e.filename = file;
    const auto x = shape.find('x');
    try {
      std::size_t p1 = 0, p2 = 0;
      if (x == std::string::npos) throw std::invalid_argument("shape");
      e.rows = std::stoull(shape.substr(0, x), &p1);
      e.cols = std::stoull(shape.substr(x + 1), &p2);
      if (p1 != x || p2 != shape.size() - x - 1) throw std::invalid_argument("shape");
      std::size_t p3 = 0;
      if (sum.size() != 8) throw std::invalid_argument("checksum");
      e.checksum = static_cast<std::uint32_t>(std::stoul(sum, &p3, 16));
      if (p3 != sum.size()) throw std::invalid_argument("checksum");
    } catch (const std::exception&) {
      fail(ErrorKind::parse, where + ": malformed shape or checksum");
    }
    if (file.find('/') != std::string::npos || file == "." || file == "..") {
      fail(ErrorKind::parse, where + ": filename must be a plain file name");
    }
    man.push_back(std::move(e));
  }
  return man;
}

inline std::string format_model_config(const ModelConfig& c) {
  return kv::write({
      {"d", std::to_string(c.d)},
      {"heads", std::to_string(c.heads)},
      {"n_max", std::to_string(c.n_max)},
      {"rho_min", io::format_double(c.rho_min)},
      {"rho_max", io::format_double(c.rho_max)},
      {"budget_hidden", std::to_string(c.budget_hidden)},
      {"budget_layers", std::to_string(c.budget_layers)},
      {"scoring_depth", std::to_string(c.scoring_depth)},
      {"reencode_depth", std::to_string(c.reencode_depth)},
      {"identity_scoring", kv::from_bool(c.identity_scoring)},
      {"time_encoding", kv::from_bool(c.time_encoding)},
      {"tau_s", io::format_double(c.tau_s)},
      {"newton_iters", std::to_string(c.newton_iters)},
      {"residual_tol", io::format_double(c.residual_tol)},
      {"seed", std::to_string(c.seed)},
  });
}

inline ModelConfig parse_model_config(std::string_view text) {
  ModelConfig c;
  for (const auto& e : kv::parse(text, ErrorKind::parse)) {
    const auto K = ErrorKind::parse;
    if (e.key == "d") c.d = kv::to_unsigned(e, K);
    else if (e.key == "heads") c.heads = kv::to_unsigned(e, K);
    else if (e.key == "n_max") c.n_max = kv::to_unsigned(e, K);
    else if (e.key == "rho_min") c.rho_min = kv::to_real(e, K);
    else if (e.key == "rho_max") c.rho_max = kv::to_real(e, K);
    else if (e.key == "budget_hidden") c.budget_hidden = kv::to_unsigned(e, K);
    else if (e.key == "budget_layers") c.budget_layers = kv::to_unsigned(e, K);
    else if (e.key == "scoring_depth") c.scoring_depth = kv::to_unsigned(e, K);
    else if (e.key == "reencode_depth") c.reencode_depth = kv::to_unsigned(e, K);
    else if (e.key == "identity_scoring") c.identity_scoring = kv::to_bool(e, K);
    else if (e.key == "time_encoding") c.time_encoding = kv::to_bool(e, K);
    else if (e.key == "tau_s") c.tau_s = kv::to_real(e, K);
    else if (e.key == "newton_iters") c.newton_iters = kv::to_unsigned(e, K);
    else if (e.key == "residual_tol") c.residual_tol = kv::to_real(e, K);
    else if (e.key == "seed") c.seed = kv::to_unsigned(e, K);
    else fail(ErrorKind::parse, std::string(kModelConfigName) + ": unknown key '" + e.key + "'");
  }
  return c;
}

// Writes every tensor plus manifest and config; the directory is created if
// needed and files are moved into place only after all were staged.
inline Manifest save_weights(const SelectorModel& model, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::missing, "cannot create weights directory " + dir.string() + ": " + ec.message());
  Manifest man;
  io::AtomicBatch batch;
  for (const auto& [name, ptr] : named_tensors(model)) {
    const std::string bytes = encode_tensor(*ptr);
    ManifestEntry e{name, ptr->rows(), ptr->cols(), crc32_of(bytes), name + ".qtn"};
    batch.add(dir / e.filename, bytes);
    man.push_back(std::move(e));
  }
  batch.add(dir / kModelConfigName, format_model_config(model.config));
  batch.add(dir / kManifestName, format_manifest(man));
  batch.commit();
  return man;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorKind::missing, "weights directory not found: " + dir.string());
  return parse_manifest(io::read_file(dir / kManifestName));
}

inline SelectorModel load_weights(const std::filesystem::path& dir) {
  const Manifest man = read_manifest(dir);
  ModelConfig cfg;
  try {
    cfg = parse_model_config(io::read_file(dir / kModelConfigName));
    cfg.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::missing) throw;
    fail(ErrorKind::parse, std::string(kModelConfigName) + ": " + e.what());
  }
  SelectorModel model = SelectorModel::create(cfg);
  std::map<std::string, const ManifestEntry*> by_name;
  for (const auto& e : man) {
    if (!by_name.emplace(e.name, &e).second) fail(ErrorKind::parse, "manifest lists '" + e.name + "' twice");
  }
  auto slots = named_tensors(model);
  if (man.size() != slots.size()) {
    for (const auto& e : man) {
      bool known = false;
      for (const auto& s : slots) known = known || s.first == e.name;
      if (!known) fail(ErrorKind::shape, "manifest lists unexpected tensor '" + e.name + "'");
    }
  }
  for (auto& [name, ptr] : slots) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorKind::missing, "missing tensor '" + name + "' in manifest");
    const ManifestEntry& e = *it->second;
    if (e.rows != ptr->rows() || e.cols != ptr->cols()) {
      fail(ErrorKind::shape, "tensor '" + name + "': manifest shape " + std::to_string(e.rows) + "x" +
                                 std::to_string(e.cols) + " conflicts with configured " + ptr->shape_string());
    }
    std::string bytes;
    try {
      bytes = io::read_file(dir / e.filename);
    } catch (const Error&) {
      fail(ErrorKind::missing, "missing tensor file for '" + name + "': " + (dir / e.filename).string());
    }
    if (crc32_of(bytes) != e.checksum) {
      fail(ErrorKind::checksum, "checksum mismatch for tensor '" + name + "'");
    }
    Matrix m = decode_tensor(bytes, "tensor '" + name + "'");
    if (!m.same_shape(*ptr)) {
      fail(ErrorKind::shape, "tensor '" + name + "': file shape " + m.shape_string() + " conflicts with configured " +
                                 ptr->shape_string());
    }
    *ptr = std::move(m);
  }
  model.validate();
  return model;
}

}  // namespace qtsplus
