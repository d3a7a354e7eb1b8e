#pragma once
#include <stdexcept>
#include <string>

namespace dsopt {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input: files, arguments, out-of-range set-points.
struct ValidationError : Error {
  using Error::Error;
};

// Singular systems, diverging iterations, non-converged solves.
struct NumericError : Error {
  using Error::Error;
};

// Measurement sets too degenerate to identify model parameters.
struct ConditioningError : Error {
  using Error::Error;
};

}  // namespace dsopt
