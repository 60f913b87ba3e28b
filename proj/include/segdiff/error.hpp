#pragma once

#include <stdexcept>
#include <string>

namespace segdiff {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// configuration 2, data/format 3, numeric 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad hyperparameters, malformed config files, unknown flags.
struct ConfigError : Error {
    using Error::Error;
};

// A caller violated a documented precondition (shape mismatch, out-of-range
// timestep, non-binary ground truth, ...).
struct ContractError : Error {
    using Error::Error;
};

// Tensor shape disagreement inside the numeric substrate.
struct DimensionError : ContractError {
    using ContractError::ContractError;
};

// NaN/Inf escaped an operation, or training diverged.
struct NumericError : Error {
    using Error::Error;
};

// On-disk format violations (bad magic, truncation, illegal bytes).
struct FormatError : Error {
    using Error::Error;
};

}  // namespace segdiff
