#include "cfx/blb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfx/error.hpp"
#include "cfx/parallel.hpp"
#include "cfx/stats.hpp"

namespace cfx {
namespace {

bool is_degenerate(const Error& e) { return e.code() == "DegenerateSubset"; }

struct SubsetRun {
  SubsetDiagnostic diag;
  std::string warning;
};

// Runs the r resamples of one subset. Deviations are centered on the subset
// plug-in value.
SubsetRun run_subset(const Statistic& statistic, std::span<const std::size_t> rows,
                     std::size_t n, std::size_t index, const BlbConfig& config) {
  SubsetRun out;
  out.diag.index = index;
  out.diag.size = rows.size();
  auto call = [&](std::span<const double> w, std::size_t resample) {
    try {
      return statistic(WeightedView{rows, w});
    } catch (const Error& e) {
      if (is_degenerate(e)) throw;
      throw numeric_error("StatisticFailed", e.what(),
                          {{"subset", std::to_string(index)},
                           {"resample", std::to_string(resample)},
                           {"cause", e.code()}});
    } catch (const std::exception& e) {
      throw numeric_error("StatisticFailed", e.what(),
                          {{"subset", std::to_string(index)},
                           {"resample", std::to_string(resample)}});
    }
  };
  try {
    const std::vector<double> plug(rows.size(), static_cast<double>(n) / static_cast<double>(rows.size()));
    out.diag.point = call(plug, 0);
    std::vector<double> draws(config.resamples);
    for (std::size_t r = 0; r < config.resamples; ++r) {
      BlbRng rng = blb_stream(config.seed, index, r);
      const std::vector<double> w = multinomial_weights(rows.size(), n, rng);
      draws[r] = call(w, r) - out.diag.point;
    }
    const double alpha = 1.0 - config.ci_level;
    out.diag.se = stats::stddev(draws);
    out.diag.dev_lo = stats::quantile(draws, alpha / 2.0);
    out.diag.dev_hi = stats::quantile(draws, 1.0 - alpha / 2.0);
  } catch (const Error& e) {
    if (!is_degenerate(e)) throw;
    out.diag.skipped = true;
    out.warning = "DegenerateSubset: subset " + std::to_string(index) + " skipped: " + e.what();
  }
  return out;
}

void aggregate(DistributionEstimate& est, const std::vector<SubsetRun>& runs) {
  std::vector<double> se, lo, hi;
  for (const auto& r : runs) {
    est.subsets.push_back(r.diag);
    if (!r.warning.empty()) est.warnings.push_back(r.warning);
    if (r.diag.skipped) continue;
    se.push_back(r.diag.se);
    lo.push_back(r.diag.dev_lo);
    hi.push_back(r.diag.dev_hi);
  }
  if (se.empty()) {
    throw numeric_error("DegenerateSubset", "every subset lacked the variation the statistic needs",
                        {{"subsets", std::to_string(runs.size())}});
  }
  const bool med = est.config.aggregation == BlbAggregation::median;
  auto agg = [med](const std::vector<double>& v) { return med ? stats::median(v) : stats::mean(v); };
  est.se = agg(se);
  // Widened so the interval always contains the point estimate.
  est.ci_lo = std::min(est.point, est.point + agg(lo));
  est.ci_hi = std::max(est.point, est.point + agg(hi));
}

double full_point(const Statistic& statistic, std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const std::vector<double> w(n, 1.0);
  return statistic(WeightedView{rows, w});
}

}  // namespace

void BlbConfig::validate() const {
  if (!(gamma >= 0.5 && gamma <= 1.0)) {
    throw config_error("InvalidBlbConfig", "gamma must lie in [0.5, 1]", {{"gamma", std::to_string(gamma)}});
  }
  if (resamples < 2) {
    throw config_error("InvalidBlbConfig", "at least two resamples are required",
                       {{"resamples", std::to_string(resamples)}});
  }
  if (!(ci_level > 0.0 && ci_level < 1.0)) {
    throw config_error("InvalidBlbConfig", "ci_level must lie in (0, 1)",
                       {{"ci_level", std::to_string(ci_level)}});
  }
}

BlbRng blb_stream(std::uint64_t seed, std::uint64_t subset, std::uint64_t resample) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(subset), static_cast<std::uint32_t>(subset >> 32),
                    static_cast<std::uint32_t>(resample), static_cast<std::uint32_t>(resample >> 32)};
  return BlbRng(seq);
}

constexpr std::uint64_t kDirectMultinomialRatio = 64;

std::vector<double> multinomial_weights(std::size_t b, std::uint64_t n, BlbRng& rng) {
  std::vector<double> out(b, 0.0);
  if (b == 0) return out;
  // Counting n uniform picks costs O(n); each binomial draw costs far more than
  // a pick, so counting wins until n is a large multiple of b.
  if (n <= kDirectMultinomialRatio * b) {
    std::uniform_int_distribution<std::size_t> pick(0, b - 1);
    for (std::uint64_t i = 0; i < n; ++i) out[pick(rng)] += 1.0;
    return out;
  }
  auto remaining = static_cast<long long>(n);
  for (std::size_t i = 0; i + 1 < b && remaining > 0; ++i) {
    std::binomial_distribution<long long> draw(remaining, 1.0 / static_cast<double>(b - i));
    const long long k = draw(rng);
    out[i] = static_cast<double>(k);
    remaining -= k;
  }
  out[b - 1] += static_cast<double>(remaining);
  return out;
}

std::size_t blb_subset_size(std::size_t n, double gamma) {
  if (n == 0) return 0;
  const auto b = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), gamma) - 1e-9));
  return std::clamp<std::size_t>(b, 1, n);
}

DistributionEstimate blb_estimate(const Statistic& statistic, std::size_t n,
                                  const BlbConfig& config) {
  config.validate();
  if (n == 0) throw data_error("EmptyData", "bootstrap needs at least one row");
  DistributionEstimate est;
  est.config = config;
  est.n = n;
  est.subset_size = blb_subset_size(n, config.gamma);
  est.n_subsets = (n + est.subset_size - 1) / est.subset_size;
  est.point = full_point(statistic, n);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  BlbRng shuffle_rng = blb_stream(config.seed, ~std::uint64_t{0}, 0);
  std::shuffle(perm.begin(), perm.end(), shuffle_rng);

  std::vector<SubsetRun> runs(est.n_subsets);
  parallel::for_each(est.n_subsets, [&](std::size_t j) {
    const std::size_t begin = j * est.subset_size;
    const std::size_t end = std::min(n, begin + est.subset_size);
    std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                  perm.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(rows.begin(), rows.end());
    runs[j] = run_subset(statistic, rows, n, j, config);
  });
  aggregate(est, runs);
  return est;
}

DistributionEstimate naive_bootstrap(const Statistic& statistic, std::size_t n,
                                     const BlbConfig& config) {
  config.validate();
  if (n == 0) throw data_error("EmptyData", "bootstrap needs at least one row");
  if (n > kNaiveBootstrapMaxRows) {
    throw data_error("TooLargeForOracle", "the full bootstrap is limited to small inputs",
                     {{"n", std::to_string(n)}});
  }
  DistributionEstimate est;
  est.config = config;
  est.n = n;
  est.subset_size = n;
  est.n_subsets = 1;
  est.point = full_point(statistic, n);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  aggregate(est, {run_subset(statistic, rows, n, 0, config)});
  return est;
}

Statistic ols_contrast_statistic(const WeightedData& data, Eigen::VectorXd contrast,
                                 std::size_t kpi) {
  if (static_cast<std::size_t>(contrast.size()) != data.p() || kpi >= data.m) {
    throw config_error("DimensionMismatch", "contrast length must equal the design width",
                       {{"contrast", std::to_string(contrast.size())}, {"p", std::to_string(data.p())}});
  }
  return [&data, c = std::move(contrast), kpi](const WeightedView& view) {
    try {
      const GramSystem g = accumulate_gram(data, Resample{view.rows, view.weights});
      const FitResult f = fit(g);
      return c.dot(f.beta.col(static_cast<Eigen::Index>(kpi)));
    } catch (const RankDeficientError& e) {
      throw numeric_error("DegenerateSubset", e.what(), e.context());
    }
  };
}

Statistic mean_statistic(std::span<const double> values) {
  return [values](const WeightedView& view) {
    stats::CompensatedSum sw, swx;
    for (std::size_t i = 0; i < view.rows.size(); ++i) {
      sw.add(view.weights[i]);
      swx.add(view.weights[i] * values[view.rows[i]]);
    }
    if (sw.value() <= 0.0) throw numeric_error("DegenerateSubset", "no positive weight");
    return swx.value() / sw.value();
  };
}

}  // namespace cfx
