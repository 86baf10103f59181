#pragma once

#include <stdexcept>
#include <string>

namespace choreoseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or sequence dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is invalid or unsupported.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data (JSON, WAV, binary caches) is malformed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A parameter sits where its reparameterization is undefined (e.g. ||v|| = 0).
class DegenerateParameterError : public Error {
 public:
  using Error::Error;
};

/// No audio sample crossed the onset amplitude.
class OnsetNotFoundError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace choreoseg
