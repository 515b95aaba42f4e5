#pragma once

#include <stdexcept>
#include <string>

namespace mtlu {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes that do not satisfy an operator's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint failures are split so callers can tell them apart.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointStructureError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace mtlu
