#pragma once

#include <stdexcept>
#include <string>

namespace perclab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct SingularMatrixError : Error {
  SingularMatrixError(const std::string& what, double condition)
      : Error(what), condition_estimate(condition) {}
  double condition_estimate;
};

struct NotSpdError : Error {
  using Error::Error;
};

// Raised when a channel partition function underflows; carries ln Z.
struct TailError : Error {
  TailError(const std::string& what, double log_z) : Error(what), log_z(log_z) {}
  double log_z;
};

struct ConvergenceError : Error {
  using Error::Error;
};

}  // namespace perclab
