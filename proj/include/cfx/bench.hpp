#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cfx/synthetic.hpp"

namespace cfx {

struct PhaseStat {
  std::string name;
  double seconds = 0.0;
  std::size_t peak_bytes = 0;  // heap high-water mark above the phase start
};

inline constexpr std::size_t kAllCates = std::numeric_limits<std::size_t>::max();

struct CateBench {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t n_cates = 0;
  std::vector<PhaseStat> phases;  // design, accumulate, factor_solve, contrast_effects, naive_effects
  double contrast_total_seconds = 0.0;  // every phase before naive_effects
  double contrast_effects_seconds = 0.0;
  double naive_effects_seconds = 0.0;   // extrapolated when only a sample ran
  std::size_t naive_cates_run = 0;
  bool naive_extrapolated = false;
  double speedup = 0.0;                 // naive / contrast, effects phase only
  double max_rel_diff = 0.0;            // over the CATEs both paths computed
  std::vector<double> estimates;        // contrast-path points, sweep order
};

/// Fits the synthetic model with treatment interactions and computes every
/// treatment x segment-cell CATE by contrasts and, for up to `naive_cates`
/// of them, by the dense counterfactual oracle.
CateBench bench_cates(const SyntheticConfig& config, std::size_t naive_cates = kAllCates);

struct CompressionBench {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t groups = 0;
  double ratio = 0.0;
  std::vector<PhaseStat> phases;  // compress, raw_fit, compressed_fit
  double speedup = 0.0;           // raw fit / compressed fit
  double max_rel_diff = 0.0;      // coefficients, compressed vs raw
  std::vector<double> beta;       // compressed fit, first KPI
};

/// Raw-row fit versus fit on the compressed dataset. Use n_profiles to bound
/// the number of distinct design rows.
CompressionBench bench_compression(const SyntheticConfig& config);

struct TslsBench {
  std::size_t n = 0;
  std::size_t n_treatments = 0;
  std::size_t p = 0;
  std::size_t sparse_input_bytes = 0;
  std::size_t dense_fitted_bytes = 0;  // an n x (K-1) double matrix
  std::size_t peak_bytes = 0;          // during the Gram-composed fit
  double seconds = 0.0;
  std::vector<double> beta;
  std::vector<double> first_stage_f;
  std::size_t oracle_n = 0;            // dense oracle on the first oracle_n rows
  std::size_t oracle_peak_bytes = 0;
  std::size_t oracle_sparse_input_bytes = 0;
};

TslsBench bench_tsls(const SyntheticConfig& config, bool run_dense_oracle);

/// |a - b| / max(|a|, |b|); 0 when both are 0.
double relative_difference(double a, double b);

}  // namespace cfx
