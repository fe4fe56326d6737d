#pragma once

#include <stdexcept>
#include <string>

namespace cfdcam {

/// Root of every error the toolkit throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A value violates a documented precondition (non-finite data, bad range, empty input).
struct ValidationError : Error {
  using Error::Error;
};

/// An image does not match the classifier's InputSpec.
struct InputSpecError : Error {
  using Error::Error;
};

/// A layer name is not present in the classifier's layer registry.
struct RegistryError : Error {
  using Error::Error;
};

/// A class index is outside [0, num_classes).
struct IndexError : Error {
  using Error::Error;
};

/// A file on disk is malformed or truncated.
struct FormatError : Error {
  using Error::Error;
};

/// The caller broke a usage contract (e.g. a SupCon anchor without positives).
struct ContractError : Error {
  using Error::Error;
};

/// A run configuration failed schema validation.
struct ConfigError : Error {
  using Error::Error;
};

/// Filesystem access failed.
struct IoError : Error {
  using Error::Error;
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace cfdcam
