#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cfx::stats {

/// Two-sided 95% normal quantile used for all delta-method intervals.
inline constexpr double kZ975 = 1.959964;

double normal_cdf(double x);

/// Linear-interpolation sample quantile (Hyndman-Fan type 7). Sorts a copy.
double quantile(std::span<const double> values, double prob);

double mean(std::span<const double> values);

/// Sample standard deviation with n - 1 denominator; 0 for fewer than 2 values.
double stddev(std::span<const double> values);

double median(std::span<const double> values);

struct KsResult {
  double statistic;
  double p_value;
};

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1).
KsResult ks_uniform(std::span<const double> values);

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if ((sum_ >= 0 ? sum_ : -sum_) >= (x >= 0 ? x : -x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  void merge(const CompensatedSum& other) noexcept {
    add(other.sum_);
    add(other.comp_);
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace cfx::stats
