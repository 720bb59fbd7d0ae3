#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cfx/solver.hpp"

namespace cfx {

enum class BlbAggregation { mean, median };

struct BlbConfig {
  double gamma = 0.7;  // b = ceil(n^gamma)
  std::size_t resamples = 100;
  std::uint64_t seed = 0;
  double ci_level = 0.95;
  BlbAggregation aggregation = BlbAggregation::mean;

  void validate() const;
};

/// Rows of the underlying dataset with frequency weights; what a statistic sees.
struct WeightedView {
  std::span<const std::size_t> rows;
  std::span<const double> weights;
};

/// Must be deterministic in (rows, weights). Throw an Error with code
/// "DegenerateSubset" when the view lacks the variation the statistic needs.
using Statistic = std::function<double(const WeightedView&)>;

struct SubsetDiagnostic {
  std::size_t index = 0;
  std::size_t size = 0;
  bool skipped = false;
  double point = 0.0;  // plug-in value with weights n / size
  double se = 0.0;
  double dev_lo = 0.0;  // quantiles of resample minus plug-in
  double dev_hi = 0.0;
};

struct DistributionEstimate {
  double point = 0.0;  // statistic on the full data
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n = 0;
  std::size_t subset_size = 0;
  std::size_t n_subsets = 0;
  std::vector<SubsetDiagnostic> subsets;
  std::vector<std::string> warnings;
  BlbConfig config;
};

using BlbRng = std::mt19937_64;

/// Independent stream for (seed, subset, resample).
BlbRng blb_stream(std::uint64_t seed, std::uint64_t subset, std::uint64_t resample);

/// Multinomial(n; 1/b, ..., 1/b) counts drawn as sequential binomials.
std::vector<double> multinomial_weights(std::size_t b, std::uint64_t n, BlbRng& rng);

/// Subset size b and subset count s for n rows.
std::size_t blb_subset_size(std::size_t n, double gamma);

/// Bag of little bootstraps over n unit-weight rows.
/// Errors: InvalidBlbConfig, EmptyData, DegenerateSubset (all subsets skipped),
/// StatisticFailed.
DistributionEstimate blb_estimate(const Statistic& statistic, std::size_t n,
                                  const BlbConfig& config);

inline constexpr std::size_t kNaiveBootstrapMaxRows = 100'000;

/// Ordinary n-out-of-n bootstrap for tests; same interval construction.
/// Errors: TooLargeForOracle.
DistributionEstimate naive_bootstrap(const Statistic& statistic, std::size_t n,
                                     const BlbConfig& config);

/// c' beta of a weighted OLS fit of `data` restricted to the view; view weights
/// multiply the stored row weights. Singular subsets become DegenerateSubset.
Statistic ols_contrast_statistic(const WeightedData& data, Eigen::VectorXd contrast,
                                 std::size_t kpi = 0);

/// Weighted mean of `values`.
Statistic mean_statistic(std::span<const double> values);

}  // namespace cfx
