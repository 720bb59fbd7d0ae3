#pragma once

#include <cstdint>
#include <vector>

#include "cfx/design.hpp"
#include "cfx/ingest.hpp"

namespace cfx {

struct SyntheticConfig {
  std::size_t n = 10'000;
  std::size_t n_treatments = 5;                        // including control
  std::vector<std::size_t> segment_levels{10, 25};     // categorical covariates seg1, seg2, ...
  std::size_t n_numeric = 6;                           // numeric covariates x1, x2, ...
  std::size_t n_kpis = 1;
  std::size_t n_periods = 0;                           // > 0 adds a time column "period"
  std::size_t n_clusters = 0;                          // > 0 adds a cluster column "cluster"
  std::size_t n_profiles = 0;                          // > 0: covariates drawn from this many profiles
  std::size_t n_instrument_levels = 0;                 // > 0: instrument "z", confounded treatment
  double noise_sd = 1.0;
  std::uint64_t seed = 1;
};

/// Randomized experiment with heterogeneous effects; columns "treatment"
/// (levels "control", "t1", ...), segment and numeric covariates, KPIs y1, y2, ...
/// Deterministic in the config.
EncodedTable synthetic_table(const SyntheticConfig& config);

/// Covariates of `synthetic_table`, optionally with treatment interactions.
DesignSpec synthetic_design(const SyntheticConfig& config, bool interactions);

}  // namespace cfx
