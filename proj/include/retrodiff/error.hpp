#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace retrodiff {

/// Base of every library exception. `error_class()` is a stable, single-token
/// identifier used by the CLI for machine-parsable failure lines.
class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& what)
      : std::runtime_error(what), class_(std::move(error_class)) {}

  const std::string& error_class() const noexcept { return class_; }

 private:
  std::string class_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error("parse", what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Input that is well-formed but violates a documented precondition.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error("checkpoint", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data", what) {}
};

}  // namespace retrodiff
