#pragma once

#include <stdexcept>
#include <string>

namespace depthgrow {

// Failure taxonomy. The CLI maps these to process exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4, FreezeAuditError -> 5.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FreezeAuditError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated preconditions inside the library (caller bugs, not input data).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace depthgrow
