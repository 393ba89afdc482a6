#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace masksembles {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on user-supplied parameters was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor operands have incompatible shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity reached an op boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed, or its contents are malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training diverged; carries the (zero-based) epoch where it happened.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " +
              what),
        epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace masksembles
