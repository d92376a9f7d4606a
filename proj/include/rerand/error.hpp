#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rerand {

// Base class for every error raised by the library. The CLI maps the
// concrete type onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed file, out-of-range parameter, inconsistent sizes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A covariance matrix failed the relative-pivot test of its Cholesky factor.
class SingularCovarianceError : public Error {
 public:
  using Error::Error;
};

// Inference or diagnostics requested on data that carries no usable variation
// (zero residual variance, nonpositive variance estimate, leverage of one).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

// The rejection loop ran out of draws. Carries what the caller needs to
// decide whether to raise the threshold or the draw budget.
class MaxDrawsExceededError : public Error {
 public:
  MaxDrawsExceededError(std::uint64_t draws_attempted, double min_m_observed, double threshold);

  std::uint64_t draws_attempted() const noexcept { return draws_attempted_; }
  double min_m_observed() const noexcept { return min_m_observed_; }
  double threshold() const noexcept { return threshold_; }

 private:
  std::uint64_t draws_attempted_;
  double min_m_observed_;
  double threshold_;
};

}  // namespace rerand
