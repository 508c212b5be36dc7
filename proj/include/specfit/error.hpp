#pragma once

#include <stdexcept>
#include <string>

namespace specfit {

// Error taxonomy mirrored by CLI exit codes: validation-class errors exit 1,
// I/O errors exit 2, numerical failures exit 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape contract violated (names the offending shapes in the message).
struct DimensionError : Error {
    using Error::Error;
};

// Bad user input: config values, dataset contents, argument ranges.
struct ValidationError : Error {
    using Error::Error;
};

// API misuse: calling an operation outside its stated preconditions.
struct ContractError : Error {
    using Error::Error;
};

// Divergence, non-convergence, non-finite values.
struct NumericalError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace specfit
