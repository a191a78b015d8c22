#pragma once

#include <stdexcept>
#include <string>

namespace dfex {

/// Invalid configuration (bad architecture spec, malformed config file, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed runtime input (shape mismatch, label out of range, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A predict call would push the query ledger past its budget.
class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted(long long count, long long budget, long long requested)
      : std::runtime_error("query budget exhausted: count=" + std::to_string(count) +
                           " budget=" + std::to_string(budget) +
                           " requested=" + std::to_string(requested)),
        count(count), budget(budget), requested(requested) {}
  long long count, budget, requested;
};

/// Remote oracle transport failure (connection, protocol, malformed payload).
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient encountered during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File systems, serialization, checkpoint manifests.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dfex
