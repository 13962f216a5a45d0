#pragma once

#include <stdexcept>
#include <string>

namespace lsa {

/// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input (CSV, embedding files, JSON documents).
class ParseError : public Error {
 public:
  ParseError(std::string what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}

  /// 1-based line number, 0 when not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Malformed or truncated binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Precondition violated by the caller (bad ids, mismatched shapes, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lsa
