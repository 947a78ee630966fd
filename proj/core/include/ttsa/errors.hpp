#pragma once

#include <stdexcept>
#include <string>

namespace ttsa {

// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input has the wrong shape (mismatched or zero dimensions, non-square kernel).
struct DimensionError : Error {
  using Error::Error;
};

// A matrix required to have eigenvalues with positive real part does not.
struct StabilityError : Error {
  using Error::Error;
};

// A matrix required to be invertible is singular or numerically so.
struct SingularityError : Error {
  using Error::Error;
};

// A kernel is not irreducible and aperiodic.
struct ErgodicityError : Error {
  using Error::Error;
};

// Input values violate a documented precondition (negative probabilities,
// out-of-range parameters, inconsistent metadata).
struct ValidationError : Error {
  using Error::Error;
};

// The stationary-moment balance equations have no solution because the
// lifted update operator is not a contraction.
struct FeasibilityError : Error {
  using Error::Error;
};

// A least-squares design matrix is rank deficient for the requested fit.
struct DesignError : Error {
  using Error::Error;
};

// A trajectory does not record the indices an operation needs.
struct ResolutionError : Error {
  using Error::Error;
};

// Two results passed to a pairwise operation do not match up
// (wrong stepsize ratio, different windows or replica counts).
struct PairingError : Error {
  using Error::Error;
};

// A file could not be parsed; message carries the byte offset when known.
struct ParseError : Error {
  using Error::Error;
};

// More replicas diverged than an ensemble summary tolerates.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace ttsa
