#pragma once

#include <stdexcept>
#include <string>

namespace mutatt {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree (matmul inner dims, concat rows, scalar loss).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A softmax or attention received a mask with no selectable position.
class InvalidMaskError : public Error {
 public:
  using Error::Error;
};

// Misuse of a graph, e.g. running backward twice.
class GraphStateError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// A forward or finite-difference evaluation produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

// Dataset loading and validation failures. `kind()` distinguishes the cause
// so callers (and tests) can react without parsing messages.
class DatasetError : public Error {
 public:
  enum class Kind {
    kMissingFile,
    kVersionMismatch,
    kDanglingReference,
    kDimensionMismatch,
    kMalformed,
  };

  DatasetError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace mutatt
