#pragma once

#include <stdexcept>
#include <string>

namespace umeg {

// Malformed on-disk record. The message names the file and line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed data that breaks a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent or out-of-range configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Request larger than the available pool (e.g. k too large for a split).
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a shape or precondition contract.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Checkpoint or run artifact that cannot be restored.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during optimisation.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace umeg
