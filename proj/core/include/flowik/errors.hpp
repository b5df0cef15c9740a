#pragma once

#include <stdexcept>
#include <string>

namespace flowik {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs with the wrong number of entries (joint vectors, batches, samples).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent documents and binary files: chain files,
// datasets, checkpoints, config files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Dataset or checkpoint payload that does not match its stored checksum
// (includes truncated files).
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Non-finite values where finite ones are required. `layer` is the index of
// the first coupling layer that produced a non-finite activation, or -1 when
// unknown.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int layer = -1)
      : Error(what), layer_(layer) {}

  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

}  // namespace flowik
