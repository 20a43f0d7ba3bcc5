// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rin {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that cannot be combined by the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (bad index, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration. Maps to CLI exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Anything wrong with input data. Maps to CLI exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

/// Malformed embedding file, checkpoint manifest or payload.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss, failed gradient check, non-deterministic objective.
/// Maps to CLI exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DeterminismError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace rin
