#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cirforge {

/// Root of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed textual input. `line()` is 1-based, 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : Error(line == 0 ? message : "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Input is well formed but violates a contract (duplicate id, bad norm, shape mismatch).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Binary container does not follow its layout (bad magic, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Failure talking to an external service (LLM endpoint).
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace cirforge
