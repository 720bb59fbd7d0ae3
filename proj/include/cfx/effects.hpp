#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cfx/blb.hpp"
#include "cfx/design.hpp"
#include "cfx/ingest.hpp"
#include "cfx/solver.hpp"

namespace cfx {

struct EffectEstimate {
  std::string kpi;
  std::uint32_t treatment_level = 0;
  std::string treatment;
  std::string segment;
  std::optional<std::string> period;
  double point = 0.0;
  double se = 0.0;
  double z = 0.0;  // NaN when se == 0
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n_segment = 0;
  CovKind cov_kind = CovKind::homoskedastic;
};

/// point = c'b, se = sqrt(c' V c), 95% normal interval.
EffectEstimate estimate_effect(const FitResult& fit, const ContrastVector& contrast,
                               CovKind cov_kind, std::size_t kpi, std::string kpi_name = {});

struct SweepRequest {
  std::vector<std::uint32_t> treatments;  // empty: every non-reference level
  std::vector<std::string> segment_by;    // partition columns; empty: population
  bool by_period = false;
  std::vector<std::size_t> kpis;          // empty: every KPI
  CovKind cov_kind = CovKind::homoskedastic;
};

/// Every (kpi, treatment, segment, period) estimate. Segment means of M come
/// from a single selector-matrix pass and are shared by all treatments and
/// KPIs. Only non-empty cells of the partition are reported.
std::vector<EffectEstimate> effect_sweep(const FitResult& fit, const ColumnLayout& layout,
                                         const SparseDesignMatrix& m,
                                         const EncodedTable& table,
                                         const SweepRequest& request);

/// Resampling statistic for one effect: the segment means and the fit both use
/// the view's weights. `data` must hold the table's rows in order.
/// Errors: EmptySegment, DimensionMismatch.
Statistic effect_statistic(const WeightedData& data, const ColumnLayout& layout,
                           const EncodedTable& table, std::uint32_t treatment_level,
                           const Segment& segment,
                           std::optional<std::uint32_t> period = std::nullopt,
                           std::size_t kpi = 0);

inline constexpr std::size_t kOracleMaxRows = 1'000'000;

/// Slow reference: materializes the dense counterfactual matrices M(A = k) and
/// M(A = reference), predicts both and averages the difference over the
/// segment. Errors: TooLargeForOracle, EmptySegment, ReferenceLevelRequested.
double naive_counterfactual_oracle(const FitResult& fit, const ColumnLayout& layout,
                                   const EncodedTable& table, std::uint32_t treatment_level,
                                   const Segment& segment,
                                   std::optional<std::uint32_t> period = std::nullopt,
                                   std::size_t kpi = 0);

}  // namespace cfx
