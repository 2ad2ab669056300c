#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace gcaps {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible operand shapes. Carries the op name and a rendering of the
/// offending shapes.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::string shapes)
      : Error(op + ": incompatible shapes " + shapes),
        op_(std::move(op)),
        shapes_(std::move(shapes)) {}

  const std::string& op() const noexcept { return op_; }
  const std::string& shapes() const noexcept { return shapes_; }

 private:
  std::string op_;
  std::string shapes_;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  DomainError(std::string op, const std::string& detail)
      : Error(op + ": " + detail), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Misuse of a computation graph (e.g. a second backward pass).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Malformed or mismatching file content (IDX, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& detail)
      : Error(field + ": " + detail), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace gcaps
