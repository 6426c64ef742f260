#pragma once

#include <stdexcept>
#include <string>

namespace mdkt {

// Base of all library errors. Subclasses map onto the stable process exit
// codes: config/usage -> 2, numeric -> 3, I/O -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration or user input (bad field values, unknown keys,
// out-of-range parameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse and shape/precondition violations detected at call sites.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Non-finite values, domain violations of numeric kernels, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk artifact; message carries the byte offset.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace mdkt
