#pragma once

#include <stdexcept>
#include <string>

namespace msnet {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError / IoError -> exit 2, NumericError -> exit 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad parameters, invalid configuration, shape mismatches.
struct ConfigError : Error {
  using Error::Error;
};

// Numerical failure: non-finite values, non-positive spectra, rank collapse,
// eigensolver non-convergence.
struct NumericError : Error {
  using Error::Error;
};

// File problems: missing files, bad magic, version mismatch, truncation,
// checksum failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace msnet
