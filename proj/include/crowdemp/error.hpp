#pragma once

#include <stdexcept>
#include <string>

namespace crowdemp {

// Bad inputs: out-of-range parameters, malformed config, precondition failures.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failures while running otherwise valid work: divergence, I/O, placement.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateGeometry : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

// Samples a statistical test cannot handle, e.g. all values equal.
class DegenerateInput : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace crowdemp
