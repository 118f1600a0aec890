#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dvsim {

using Complex = std::complex<double>;

using BusId = int;
using BranchId = int;   // index into GridCase::branches
using GroupId = int;

/// Logical simulation time in microseconds. Configs and reports speak
/// milliseconds; the engine keeps integer microseconds so event arithmetic
/// is exact and replays are bit-identical.
using LogicalTime = std::int64_t;

inline constexpr LogicalTime kMicrosPerMilli = 1000;

inline LogicalTime millis_to_time(double ms) {
  return static_cast<LogicalTime>(ms * static_cast<double>(kMicrosPerMilli) + 0.5);
}

inline double time_to_millis(LogicalTime t) {
  return static_cast<double>(t) / static_cast<double>(kMicrosPerMilli);
}

/// Error raised for malformed configuration or case input.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Error raised when a numeric routine cannot proceed (singular matrix,
/// degenerate impedance, missing data).
class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

/// Error raised by the monitoring/control logic (broken preconditions such
/// as a split while unstable, or no adjacent group to merge with).
class ControlError : public std::runtime_error {
 public:
  explicit ControlError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dvsim
