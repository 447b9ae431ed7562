#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace mvb {

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      compensation_ += (sum_ - t) + x;
    } else {
      compensation_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  void add(const CompensatedSum& other) {
    add(other.sum_);
    add(other.compensation_);
  }
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

/// Sample mean and standard error of i.i.d. observations.
class SampleStats {
 public:
  void add(double x) {
    ++count_;
    sum_.add(x);
    sum_sq_.add(x * x);
  }
  void merge(const SampleStats& other) {
    count_ += other.count_;
    sum_.add(other.sum_);
    sum_sq_.add(other.sum_sq_);
  }

  std::size_t count() const { return count_; }
  double mean() const { return count_ == 0 ? 0.0 : sum_.value() / static_cast<double>(count_); }
  /// Standard error of the mean; 0 for fewer than two observations.
  double standard_error() const {
    if (count_ < 2) return 0.0;
    const double n = static_cast<double>(count_);
    const double m = mean();
    const double var = std::max(0.0, sum_sq_.value() / n - m * m) * n / (n - 1.0);
    return std::sqrt(var / n);
  }

 private:
  std::size_t count_ = 0;
  CompensatedSum sum_;
  CompensatedSum sum_sq_;
};

}  // namespace mvb
