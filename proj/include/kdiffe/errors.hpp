#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kdiffe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Input data that parses but violates a structural requirement.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Loss or gradient became non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace kdiffe
