#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gdim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A state or parameter lies outside the domain of the map or estimator.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed call: bad sizes, empty inputs, mismatched dimensions.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// The requested system or transform is not supported by this routine.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Least-squares or likelihood fit could not be carried out.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the range covered by tabulated or interpolated data.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Too few events (exceedances, blocks, hits) to form an estimate.
class InsufficientData : public Error {
 public:
  InsufficientData(const std::string& what, std::size_t available, std::size_t required)
      : Error(what + " (have " + std::to_string(available) + ", need " +
              std::to_string(required) + ")"),
        available_(available),
        required_(required) {}

  std::size_t available() const noexcept { return available_; }
  std::size_t required() const noexcept { return required_; }

 private:
  std::size_t available_;
  std::size_t required_;
};

/// Input file could not be parsed; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Input value is NaN or infinite; line() names the offending row.
class NonFiniteError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Invalid run configuration (maps to CLI exit status 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace gdim
