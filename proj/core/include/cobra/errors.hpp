#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cobra {

// Base of every error thrown by the library. Callers that only want to
// distinguish "our" failures from std exceptions catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class InvalidParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedModeError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class TimerResolutionError : public Error {
 public:
  using Error::Error;
};

// File missing or unreadable.
class IoError : public Error {
 public:
  using Error::Error;
};

// Raised while decoding a weight container. `offset` is the byte position
// where the reader gave up.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace cobra
