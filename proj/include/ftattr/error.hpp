#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ftattr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input detected before any numerical work (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t row) : ValidationError(what), row_(row) {}
  // 1-based line number in the source file (the header is line 1).
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class NonNumericError : public ParseError {
 public:
  using ParseError::ParseError;
};

class UnsupportedTaskError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AlignmentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical failures (CLI exit code 2).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DivergedError : public NumericalError {
 public:
  DivergedError(const std::string& what, std::size_t step) : NumericalError(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// A similarity, cosine or direction is undefined for zero/constant input.
class UndefinedError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class RankDeficientError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace ftattr
