#pragma once

#include <stdexcept>
#include <string>

namespace xspdc {

/// Base class for every error the toolkit raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad file contents: magic bytes, truncated payloads, CSV schema (exit code 3).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Frame or calibration dimensions that do not line up (exit code 3).
class DimensionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Argument outside the domain of a physical relation, e.g. no Bragg reflection.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Transverse phase matching has no real solution for the requested photon.
class NoSolutionError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Signal and idler windows do not add up to the pump energy.
class WindowMismatchError : public Error {
 public:
  using Error::Error;
};

/// Radial histogram has no peak above its median level.
class NoPeakError : public Error {
 public:
  using Error::Error;
};

/// Least-squares fit with a single distinct abscissa.
class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

}  // namespace xspdc
