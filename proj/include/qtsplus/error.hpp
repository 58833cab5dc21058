// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace qtsplus {

// Failure classes. The CLI maps each one onto a distinct exit code.
enum class ErrorKind {
  shape,         // dimension mismatch between operands
  parameter,     // argument outside its documented domain
  configuration, // inconsistent model / head configuration
  input,         // bad input values (negative timestamps, K > M, ...)
  empty_input,   // an operand stream with zero rows
  oracle,        // finite-difference oracle hit a non-finite evaluation
  parse,         // malformed file contents
  missing,       // missing file, directory or tensor
  checksum,      // stored checksum does not match contents
  numeric,       // NaN / divergence during computation
  schema,        // unknown or ill-typed configuration key
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::input: return "input error";
    case ErrorKind::empty_input: return "empty-input error";
    case ErrorKind::oracle: return "oracle error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::missing: return "missing resource";
    case ErrorKind::checksum: return "checksum error";
    case ErrorKind::numeric: return "numeric failure";
    case ErrorKind::schema: return "config schema error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace qtsplus
