#pragma once

#include <stdexcept>
#include <string>

namespace numvae {

// Error taxonomy shared by every module. The CLI maps these onto exit
// codes: ConfigError -> 2, DataError and descendants -> 3,
// DivergenceError -> 4, anything else -> 1.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration key, value, or file.
struct ConfigError : Error {
  using Error::Error;
};

// Unusable input data (datasets, weights, checkpoints, label files).
struct DataError : Error {
  using Error::Error;
};

struct FormatError : DataError {
  using DataError::DataError;
};

struct IoError : DataError {
  using DataError::DataError;
};

struct MissingImageError : DataError {
  using DataError::DataError;
};

struct AssetError : DataError {
  using DataError::DataError;
};

// Rejection sampling could not place the requested objects.
struct PackingFailure : DataError {
  using DataError::DataError;
};

struct WeightsError : DataError {
  using DataError::DataError;
};

struct UnknownLayerError : DataError {
  using DataError::DataError;
};

struct DegenerateInputError : DataError {
  using DataError::DataError;
};

// Tensor shape mismatch between caller and callee.
struct ShapeError : Error {
  using Error::Error;
};

// Math contract violated (e.g. non-positive standard deviation).
struct DomainError : Error {
  using Error::Error;
};

// Training loss became non-finite.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace numvae
