#pragma once

#include <stdexcept>
#include <string>

namespace bcrec {

// Base class for all toolkit failures. Subclasses map onto CLI exit codes:
// ConfigError -> 2, everything else -> 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, fractions, flags, or other user-supplied settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Data-dependent failure: empty datasets, missing timestamps, zero-norm
// embeddings, out-of-range ids.
class DataError : public Error {
 public:
  using Error::Error;
};

// A numerical invariant that should hold by construction was violated.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace bcrec
