#pragma once

#include <stdexcept>
#include <string>

namespace peftseg {

/// Base class for every error raised by the library. Each subclass maps to a
/// CLI exit code (see tools/peftseg.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent input data (rasters, masks, manifests).
class DataError : public Error {
 public:
  using Error::Error;
};

class InputError : public DataError {
 public:
  using DataError::DataError;
};

class LabelError : public DataError {
 public:
  using DataError::DataError;
};

class AlignmentError : public DataError {
 public:
  using DataError::DataError;
};

class SamplingExhaustedError : public DataError {
 public:
  SamplingExhaustedError(const std::string& what, std::string tile_id)
      : DataError(what), tile_id_(std::move(tile_id)) {}
  const std::string& tile_id() const { return tile_id_; }

 private:
  std::string tile_id_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or a diverged optimizer.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace peftseg
