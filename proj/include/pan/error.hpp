#pragma once

#include <stdexcept>
#include <string>

namespace pan {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Shape disagreement between tensors or between a tensor and a layer signature.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Value outside the operation's domain (bad axis, label out of range, p >= 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong order (backward before forward, subject leakage, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where the contract requires finite ones.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or run configuration, detected before any computation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem-level failure (unreadable path, write failure).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pan
