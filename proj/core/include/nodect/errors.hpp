#pragma once

#include <cstddef>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace nodect {

/// Raised for precondition violations (bad counts, shape mismatches, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Geometry that cannot be realized, e.g. a cone angle at or above 90 degrees.
class InvalidGeometry : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Malformed or inconsistent data files (bad magic, truncated payload, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A non-finite value appeared while integrating the reconstruction dynamics.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, double max_abs, const std::string& where)
      : std::runtime_error("numerical divergence at step " + std::to_string(step) + " (" + where +
                           "), max |x| = " + format_magnitude(max_abs)),
        step_(step),
        max_abs_(max_abs) {}

  int step() const noexcept { return step_; }
  double max_abs() const noexcept { return max_abs_; }

 private:
  static std::string format_magnitude(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
  }
  int step_;
  double max_abs_;
};

/// Training gave up, e.g. because too many samples of an epoch diverged.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nodect
