#pragma once

#include <stdexcept>
#include <string>

namespace che {

// Error categories used across the library. Messages carry the offending
// operation and shapes/values so callers can log them directly.

struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidRecordError : std::invalid_argument {
  explicit InvalidRecordError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace che
