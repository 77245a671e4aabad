#pragma once

#include <stdexcept>
#include <string>

namespace adxr {

// Contract violations: wrong shapes, out-of-range arguments, misuse of an op.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration / CLI usage. Mapped to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing or malformed input data. Mapped to exit code 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or numeric divergence. Mapped to exit code 4.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace adxr
