#pragma once

#include <stdexcept>
#include <string>

namespace unmix {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible matrix dimensions anywhere in the pipeline.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf values, rank deficiency, solver non-convergence, divergence.
struct NumericError : Error {
  using Error::Error;
};

// File format violations and filesystem failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace unmix
