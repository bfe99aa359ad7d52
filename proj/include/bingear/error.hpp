#pragma once

#include <stdexcept>
#include <string>

namespace bingear {

// Failure categories. Each maps onto one CLI exit code.
enum class ErrorKind {
  parse,       // malformed input text
  data,        // dataset fails validation
  format,      // binary file has the wrong magic/version/size
  capacity,    // input exceeds an index width or a size cap
  contract,    // caller broke a precondition (dim mismatch, empty pool, ...)
  lookup,      // node id out of range
  numeric,     // NaN/Inf produced or consumed
  usage,       // bad CLI/config input
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// 0 success, 2 data error, 64 usage error, 70 internal numeric error.
inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage:
      return 64;
    case ErrorKind::numeric:
    case ErrorKind::contract:
      return 70;
    default:
      return 2;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::contract, what);
}

}  // namespace bingear
