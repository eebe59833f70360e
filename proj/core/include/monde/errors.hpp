#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace monde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// graph

class NumericalFailure : public Error {
 public:
  NumericalFailure(int node, const std::string& what)
      : Error("non-finite value at node " + std::to_string(node) + ": " + what), node_(node) {}
  int node() const noexcept { return node_; }

 private:
  int node_;
};

class UnsupportedOp : public Error {
 public:
  using Error::Error;
};

class TapeConsumed : public Error {
 public:
  TapeConsumed() : Error("backward already ran on this tape") {}
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// layers / models

class InvalidDim : public Error {
 public:
  using Error::Error;
};

class NonPositiveD : public Error {
 public:
  using Error::Error;
};

class SingularCorrelation : public Error {
 public:
  using Error::Error;
};

class DegenerateColumn : public Error {
 public:
  using Error::Error;
};

class DimTooLarge : public Error {
 public:
  using Error::Error;
};

// training

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

// data

class NonPositivePrice : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::size_t col, const std::string& what)
      : Error("parse error at row " + std::to_string(row) + ", col " + std::to_string(col) + ": " +
              what),
        row_(row),
        col_(col) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// eval

class OneClassOnly : public Error {
 public:
  using Error::Error;
};

class NoPositives : public Error {
 public:
  using Error::Error;
};

class BracketFailure : public Error {
 public:
  using Error::Error;
};

class NegativeMass : public Error {
 public:
  using Error::Error;
};

// persistence / configuration

class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumFailure : public Error {
 public:
  using Error::Error;
};

class FamilyMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class UnknownFamily : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace monde
