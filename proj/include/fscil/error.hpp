// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fscil {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A zero-norm vector reached an operation that normalizes.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced during a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the computation graph (e.g. backward called twice).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Session bookkeeping violated (label overlap, unassigned proxy, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Not enough disentanglement proxies left for a session.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Requested more mutually orthogonal vectors than the dimension allows.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class MetricsError : public Error {
 public:
  using Error::Error;
};

class ProjectionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration. `field()` is the JSON path of the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace fscil
