#pragma once

#include <stdexcept>
#include <string>

namespace fme {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or out-of-range configuration (dimensions, penalties, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a function (e.g. t outside T).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite numeric input.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Least-squares system without full column rank, or too few samples.
class RankError : public Error {
 public:
  using Error::Error;
};

/// Derivative operator whose leading block cannot be inverted.
class OperatorError : public Error {
 public:
  OperatorError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Malformed input file; row/column are 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what), row_(row), column_(column) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

}  // namespace fme
