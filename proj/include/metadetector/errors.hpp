#pragma once

#include <stdexcept>
#include <string>

namespace metadet {

// Base for every error the library raises. The CLI maps any of these to
// exit code 2 (data/contract error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

// Corpus/vocabulary mismatches, degenerate data, non-finite losses.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace metadet
