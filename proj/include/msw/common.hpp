#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace msw {

// Error hierarchy. Every throwing site uses one of these so callers (and the
// CLI) can map failures onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad values or shapes in data passed to an operation.
struct ValueError : Error {
  using Error::Error;
};

// Tensor shape mismatches.
struct DimensionError : ValueError {
  using ValueError::ValueError;
};

// Invalid or inconsistent configuration (unknown keys, impossible splits,
// single-shell NODDI, rank-deficient designs, ...).
struct ConfigError : Error {
  using Error::Error;
};

// File format / filesystem problems.
struct IoError : Error {
  using Error::Error;
};

// Subject leakage between train/val/test. Fatal by contract.
struct LeakageError : Error {
  using Error::Error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class A, class... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

}  // namespace msw
