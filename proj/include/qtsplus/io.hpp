// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qtsplus/error.hpp"

namespace qtsplus::io {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::missing, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Path next to `target` for staging an atomic write.
inline fs::path temp_path_for(const fs::path& target) {
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  return target.parent_path() / (".tmp." + target.filename().string() + "." + std::to_string(gen() % 1000000007ULL));
}

inline void write_bytes(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::missing, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) fail(ErrorKind::missing, "short write to " + path.string());
}

// Stages the content in a sibling temp file, then renames it into place.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    fail(ErrorKind::missing, "output directory does not exist: " + path.parent_path().string());
  }
  const fs::path tmp = temp_path_for(path);
  write_bytes(tmp, bytes);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorKind::missing, "cannot move output into place: " + path.string() + " (" + ec.message() + ")");
  }
}

// Several outputs that should appear together: everything is staged first
// and only renamed once all writes succeeded.
class AtomicBatch {
 public:
  AtomicBatch() = default;
  AtomicBatch(const AtomicBatch&) = delete;
  AtomicBatch& operator=(const AtomicBatch&) = delete;
  ~AtomicBatch() {
    for (auto& [tmp, dst] : staged_) {
      std::error_code ec;
      fs::remove(tmp, ec);
    }
  }

  void add(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path() && !fs::exists(path.parent_path())) {
      fail(ErrorKind::missing, "output directory does not exist: " + path.parent_path().string());
    }
    const fs::path tmp = temp_path_for(path);
    write_bytes(tmp, bytes);
    staged_.emplace_back(tmp, path);
  }

  void commit() {
    for (auto& [tmp, dst] : staged_) {
      std::error_code ec;
      fs::rename(tmp, dst, ec);
      if (ec) fail(ErrorKind::missing, "cannot move output into place: " + dst.string());
    }
    staged_.clear();
  }

 private:
  std::vector<std::pair<fs::path, fs::path>> staged_;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace qtsplus::io
