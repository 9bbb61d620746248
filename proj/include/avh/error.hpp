#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avh {

/// Contract violation on an input value (bad shape, out-of-range ordinal, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A record in a line-oriented log could not be parsed.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& cause)
      : std::runtime_error("line " + std::to_string(line) + ": " + cause), line_(line), cause_(cause) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::size_t line_;
  std::string cause_;
};

/// Archive/manifest problems: missing tensor, shape mismatch, corrupt manifest.
class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace avh
