#pragma once

#include <stdexcept>
#include <string>

namespace sdde {

// Base class for failures of a numerical procedure on otherwise valid input.
// The CLI maps these to exit status 2; std::invalid_argument maps to 1.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonStationaryError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Durbin-Levinson breakdown: 1 - phi_{i,i}^2 fell below the conditioning floor.
class LadderError : public NumericalError {
 public:
  LadderError(int level, const std::string& what)
      : NumericalError(what), level_(level) {}
  int level() const noexcept { return level_; }

 private:
  int level_;
};

// A grid or path does not reach the lags / times an operation needs.
class CoverageError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace sdde
