#pragma once

#include <stdexcept>
#include <string>

namespace bayesmdp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input violates a documented invariant (indices, probabilities, geometry).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A non-terminal state is left without any allowed action.
class CoverageError : public ValidationError {
 public:
  CoverageError(const std::string& what, long state) : ValidationError(what), state_(state) {}
  long state() const noexcept { return state_; }

 private:
  long state_;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Bad algorithm parameter (sample counts, tolerances).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Solver failure or non-finite quantities.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bayesmdp
