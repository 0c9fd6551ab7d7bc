#pragma once

#include <stdexcept>
#include <string>

namespace seqcl {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4, anything else -> 1.

// Invalid or inconsistent configuration (bad dimensions, out-of-range
// hyper-parameters, unknown config keys).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input data: dimension mismatches, malformed records, unknown labels,
// contract violations on operation inputs.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation called in an invalid order (e.g. recording a score-matrix row
// twice for the same stage).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during training; aborts the run.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace seqcl
