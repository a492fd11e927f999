#pragma once

#include <stdexcept>
#include <string>

namespace flsl {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition or domain constraint was violated by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// File content does not follow the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Configuration key is unknown, mistyped or out of range.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace flsl
