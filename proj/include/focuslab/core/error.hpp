// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace focuslab {

/// Error categories. The CLI maps these onto the `E:<code>:` prefix and exit codes.
enum class ErrorCode {
  usage,
  config,
  io,
  format,
  shape,
  numeric,
  domain,
  validation,
  lock,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::shape: return "shape";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::domain: return "domain";
    case ErrorCode::validation: return "validation";
    case ErrorCode::lock: return "lock";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace focuslab
