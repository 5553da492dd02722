#pragma once

#include <stdexcept>
#include <string>

namespace gatelab {

/// Argument outside the mathematical domain of an operation (e.g. demand > 1).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operation invoked in a state where it is not allowed (e.g. stepping an
/// episode that already arrived).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Inconsistent shapes or missing configuration entries.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace gatelab
