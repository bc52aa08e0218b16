#pragma once

#include <stdexcept>
#include <string>

namespace vitinv {

/// Base class for all library errors. Subclasses give callers (and the CLI's
/// machine-parseable error line) a stable category name.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  virtual const char* kind() const noexcept { return "error"; }
};

/// Tensor/matrix dimension disagreement.
struct ShapeError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

/// Violated API precondition (empty active set, scalar expected, K too large...).
struct ContractError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};

/// Class label outside the configured range.
struct LabelError : ContractError {
  using ContractError::ContractError;
  const char* kind() const noexcept override { return "label"; }
};

/// Non-finite loss or value where a finite one is required.
struct NumericError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

/// Malformed or truncated persisted file.
struct FormatError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

/// Bad configuration key/value; carries the offending line when known.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_number(line) {}
  const char* kind() const noexcept override { return "config"; }
  int line_number;
};

/// Integer overflow in exact arithmetic (never wraps silently).
struct OverflowError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "overflow"; }
};

}  // namespace vitinv
