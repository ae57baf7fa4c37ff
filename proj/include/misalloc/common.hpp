#pragma once

#include <stdexcept>
#include <string>

namespace misalloc {

// Config or input shape problems: bad columns, invalid specs, bad options.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures during estimation or numerical work on valid inputs.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Execution { Serial, Parallel };

}  // namespace misalloc
