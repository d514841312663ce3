#pragma once

#include <stdexcept>
#include <string>

namespace pinv {

// Bad input: malformed files, out-of-range values, inconsistent structure.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical breakdown: failed factorizations, non-finite rates.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ill-conditioned covariance; carries the last jitter tried.
class IllConditionedError : public NumericalError {
 public:
  IllConditionedError(const std::string& what, double jitter)
      : NumericalError(what), jitter_(jitter) {}
  double jitter() const noexcept { return jitter_; }

 private:
  double jitter_;
};

}  // namespace pinv
