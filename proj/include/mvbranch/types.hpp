#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mvb {

/// Largest spatial / control dimension supported by the stack-allocated
/// point types. Positions are still dynamically sized up to this bound.
inline constexpr int kMaxDimension = 4;

using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDimension, 1>;
using ControlValue = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDimension, 1>;
using DiffusionMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDimension, kMaxDimension>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Raised when a simulated or integrated quantity becomes non-finite or
/// leaves its admissible range.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace mvb
