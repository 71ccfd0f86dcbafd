#pragma once

#include <stdexcept>
#include <string>

namespace tvrl {

/// Base class for all library errors.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad field values, geometry mismatches, strategy/flag
/// coupling violations). CLI maps this to exit code 3.
struct config_error : error {
  using error::error;
};

/// A caller broke an operation's precondition (mask index out of range, times
/// passed to a model without time embedding, step past the schedule end, ...).
struct contract_error : error {
  using error::error;
};

/// Unusable or inconsistent data (records with too few frames, split leaks,
/// malformed manifests).
struct data_error : error {
  using error::error;
};

/// Filesystem / serialization failures, including checkpoint mismatches.
struct io_error : error {
  using error::error;
};

/// A metric is undefined for the given inputs (e.g. AUC with one class).
struct metric_error : error {
  using error::error;
};

}  // namespace tvrl
