#pragma once

#include <stdexcept>
#include <string>

namespace stoneseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: unreadable files, schema violations, uncroppable frames.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (model, training, scene).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image dimensions that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared at a layer boundary.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite or exploding loss.
class DivergedError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Reason { bad_magic, truncated, shape_mismatch, malformed };

  CheckpointError(Reason reason, const std::string& what) : Error(what), reason_(reason) {}

  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

}  // namespace stoneseg
