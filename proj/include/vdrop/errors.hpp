#pragma once

#include <stdexcept>
#include <string>

namespace vdrop {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad or inconsistent feeder configuration. `field()` holds the JSON path of
/// the offending entry (e.g. "loads[2].scale_pos"), empty when not applicable.
class ConfigError : public Error {
  public:
    ConfigError(std::string field, const std::string& message)
        : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

/// Numerical breakdown: non-convergent sweep, mass blowup in the DP, etc.
class NumericalError : public Error {
  public:
    using Error::Error;
};

class ConvergenceError : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

class MassLossError : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

}  // namespace vdrop
