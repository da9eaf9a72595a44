#pragma once

#include <stdexcept>
#include <string>

namespace adabatch {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number where parsing failed.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An argument outside the domain of the operation (batch size, sizes, indices).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Input that makes a formula degenerate, e.g. a non-decreasing "decreasing" line.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver stopped before reaching its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw RangeError(message);
}

}  // namespace adabatch
