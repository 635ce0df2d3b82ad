// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mudet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input values outside the documented domain of an operation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `line()` is 0 when the error is not line-bound.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf during training, or a failed gradient check.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mudet
