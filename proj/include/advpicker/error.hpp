#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace advpicker {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IOError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number of the offending line.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class InvalidBIO : public Error {
 public:
  using Error::Error;
};

class NonScalarLoss : public Error {
 public:
  using Error::Error;
};

class MissingGrad : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

/// Raised when gold target labels would reach the student's training data.
class LabelLeak : public Error {
 public:
  using Error::Error;
};

/// A produced artifact broke a structural guarantee (invalid BIO output,
/// non-stochastic soft labels, scores out of range).
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace advpicker
