#pragma once

#include <stdexcept>
#include <string>

namespace ntcp {

// Base class for all library failures. Subclasses name the failure mode so
// callers (the CLI in particular) can map them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data or configuration is malformed.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class InvalidHistogram : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GridMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InvalidParameter : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptySubset : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyDraws : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyStratum : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical computation failed.
class ComputeError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class DegenerateDenominator : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class SingularSolve : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class SingularJacobian : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class IntegrationError : public ComputeError {
 public:
  IntegrationError(const std::string& what, double achieved_error)
      : ComputeError(what), achieved_error_(achieved_error) {}
  double achieved_error() const noexcept { return achieved_error_; }

 private:
  double achieved_error_;
};

class InsufficientAcceptance : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

// Too many bootstrap or simulation replicates failed.
class ReplicateFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace ntcp
