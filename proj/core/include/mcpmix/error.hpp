#pragma once

#include <stdexcept>
#include <string>

namespace mcpmix {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two operands disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the operation's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed. Carries the offending path.
class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace mcpmix
