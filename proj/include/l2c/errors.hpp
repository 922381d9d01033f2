#pragma once

#include <stdexcept>
#include <string>

namespace l2c {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied inputs that violate a precondition (shapes, counts, ids).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// File-format errors. Each failure mode has its own type so callers and tests
// can tell them apart.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MissingFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NonFiniteValueError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// An operation was attempted that the object's lifecycle forbids
/// (e.g. reading a dropped domain cache).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace l2c
