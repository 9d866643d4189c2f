#pragma once

#include <stdexcept>
#include <string>

namespace mtplab {

// Bad shapes, mismatched extents, out-of-range axes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf produced or consumed, degenerate batches, diverged losses.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed configs, unknown keys, inconsistent plans.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable/corrupt files, failed writes, lock conflicts.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mtplab
