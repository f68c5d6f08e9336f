#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace npal {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. `line` is 1-based; 0 when no line applies.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A value violates a documented invariant (bad spans, bad tag sequence, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// An operation was requested in a state that does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

// No such session, corpus or resource.
class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace npal
