#pragma once

#include <stdexcept>
#include <string>

namespace olab {

// Error taxonomy shared across the library. Each class corresponds to one
// CLI exit code family: ConfigError -> 2, DataError -> 3, NumericalError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotationError : Error {
  using Error::Error;
};

struct IllegalMoveError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct AlignmentError : Error {
  using Error::Error;
};

// Checkpoint loading failures, kept distinct so callers can tell a truncated
// file from a format revision from a model built with different dimensions.
struct CheckpointError : Error {
  using Error::Error;
};
struct CorruptCheckpointError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct VersionMismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct ConfigMismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};

}  // namespace olab
