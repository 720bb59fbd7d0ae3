#include "cfx/effects.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cfx/error.hpp"
#include "cfx/stats.hpp"

namespace cfx {

EffectEstimate estimate_effect(const FitResult& fit, const ContrastVector& contrast,
                               CovKind cov_kind, std::size_t kpi, std::string kpi_name) {
  if (static_cast<std::size_t>(contrast.c.size()) != fit.p()) {
    throw data_error("DimensionMismatch", "contrast length differs from the coefficient count");
  }
  if (kpi >= fit.m()) throw config_error("UnknownKpi", "kpi index out of range");
  const Eigen::MatrixXd& v = fit.covariance(cov_kind, kpi);

  EffectEstimate e;
  e.kpi = std::move(kpi_name);
  e.treatment_level = contrast.treatment_level;
  e.treatment = contrast.treatment;
  e.segment = contrast.segment;
  e.period = contrast.period;
  e.n_segment = contrast.n_segment;
  e.cov_kind = cov_kind;
  e.point = contrast.c.dot(fit.beta.col(static_cast<Eigen::Index>(kpi)));
  const double var = contrast.c.dot(v * contrast.c);
  e.se = std::sqrt(std::max(0.0, var));
  e.z = e.se > 0.0 ? e.point / e.se : std::numeric_limits<double>::quiet_NaN();
  e.ci_lo = e.point - stats::kZ975 * e.se;
  e.ci_hi = e.point + stats::kZ975 * e.se;
  return e;
}

std::vector<EffectEstimate> effect_sweep(const FitResult& fit, const ColumnLayout& layout,
                                         const SparseDesignMatrix& m,
                                         const EncodedTable& table,
                                         const SweepRequest& request) {
  layout.check_compatible(table);

  std::vector<std::uint32_t> treatments = request.treatments;
  if (treatments.empty()) {
    for (std::uint32_t k = 1; k < layout.n_treatment_levels(); ++k) treatments.push_back(k);
  }
  for (auto k : treatments) {
    if (k == 0) {
      throw config_error("ReferenceLevelRequested",
                         "the reference treatment level has no effect against itself",
                         {{"treatment", layout.treatment_levels()[0]}});
    }
    if (k >= layout.n_treatment_levels()) {
      throw config_error("UnknownLevel", "treatment level index out of range");
    }
  }
  std::vector<std::size_t> kpis = request.kpis;
  if (kpis.empty()) {
    for (std::size_t j = 0; j < fit.m(); ++j) kpis.push_back(j);
  }

  // Partition columns, validated like single-segment predicates.
  std::vector<const Column*> parts;
  const auto& covs = layout.spec().covariates;
  for (const auto& name : request.segment_by) {
    const Column& col = table.column(name);
    if (std::find(covs.begin(), covs.end(), name) == covs.end() || !col.categorical()) {
      throw config_error("SegmentNotCovariate",
                         "segment column '" + name + "' must be a categorical covariate",
                         {{"column", name}});
    }
    parts.push_back(&col);
  }
  const Column* time = nullptr;
  if (request.by_period) {
    if (!layout.has_time()) {
      throw config_error("InvalidDesign", "period effects need a time column in the design");
    }
    time = &table.columns()[layout.time_source()];
    parts.push_back(time);
  }

  // Dense cell ids in increasing mixed-radix order.
  std::vector<std::uint64_t> composite(table.n_rows(), 0);
  for (std::size_t i = 0; i < table.n_rows(); ++i) {
    std::uint64_t code = 0;
    for (const Column* c : parts) code = code * c->levels.size() + c->codes[i];
    composite[i] = code;
  }
  std::map<std::uint64_t, std::size_t> cell_of;
  for (auto code : composite) cell_of.emplace(code, 0);
  std::vector<std::uint64_t> cell_codes;
  for (auto& [code, id] : cell_of) {
    id = cell_codes.size();
    cell_codes.push_back(code);
  }
  std::vector<std::size_t> segment_of_row(table.n_rows());
  for (std::size_t i = 0; i < table.n_rows(); ++i) segment_of_row[i] = cell_of[composite[i]];

  const SegmentMeans means = segment_means(m, layout, segment_of_row, cell_codes.size());

  // Decode cell labels.
  std::vector<std::string> labels(cell_codes.size());
  std::vector<std::optional<std::string>> periods(cell_codes.size());
  for (std::size_t s = 0; s < cell_codes.size(); ++s) {
    std::uint64_t code = cell_codes[s];
    std::vector<std::uint32_t> levels(parts.size());
    for (std::size_t c = parts.size(); c-- > 0;) {
      levels[c] = static_cast<std::uint32_t>(code % parts[c]->levels.size());
      code /= parts[c]->levels.size();
    }
    Segment seg;
    for (std::size_t c = 0; c < request.segment_by.size(); ++c) {
      seg.predicates.emplace_back(parts[c]->name, parts[c]->levels[levels[c]]);
    }
    labels[s] = seg.descriptor();
    if (time) periods[s] = time->levels[levels.back()];
  }

  const auto kpi_names = table.kpi_names();
  std::vector<EffectEstimate> out;
  out.reserve(kpis.size() * treatments.size() * cell_codes.size());
  for (std::size_t j : kpis) {
    for (auto k : treatments) {
      for (std::size_t s = 0; s < cell_codes.size(); ++s) {
        ContrastVector cv = contrast_from_means(layout, k, means.means.row(static_cast<Eigen::Index>(s)),
                                                means.counts[s]);
        cv.segment = labels[s];
        cv.period = periods[s];
        out.push_back(estimate_effect(fit, cv, request.cov_kind, j,
                                      j < kpi_names.size() ? kpi_names[j] : std::string{}));
      }
    }
  }
  return out;
}

double naive_counterfactual_oracle(const FitResult& fit, const ColumnLayout& layout,
                                   const EncodedTable& table, std::uint32_t treatment_level,
                                   const Segment& segment, std::optional<std::uint32_t> period,
                                   std::size_t kpi) {
  const std::size_t n = table.n_rows();
  const std::size_t p = layout.p();
  if (n > kOracleMaxRows || n * p > (std::size_t{1} << 27)) {
    throw data_error("TooLargeForOracle", "naive counterfactual oracle is limited to small inputs",
                     {{"n", std::to_string(n)}, {"p", std::to_string(p)}});
  }
  if (treatment_level == 0) {
    throw config_error("ReferenceLevelRequested",
                       "the reference treatment level has no effect against itself");
  }
  if (kpi >= fit.m()) throw config_error("UnknownKpi", "kpi index out of range");
  const auto selector = segment_selector(table, layout, segment, period);

  // Dense row-major counterfactual model matrices.
  std::vector<double> treated(n * p, 0.0);
  std::vector<double> control(n * p, 0.0);
  std::vector<Entry> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    layout.emit_row(table, i, treatment_level, row);
    for (const auto& e : row) treated[i * p + e.col] = e.value;
    row.clear();
    layout.emit_row(table, i, 0, row);
    for (const auto& e : row) control[i * p + e.col] = e.value;
  }

  const auto beta = fit.beta.col(static_cast<Eigen::Index>(kpi));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double yt = 0.0, yc = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      yt += treated[i * p + j] * beta(static_cast<Eigen::Index>(j));
      yc += control[i * p + j] * beta(static_cast<Eigen::Index>(j));
    }
    if (selector[i]) {
      total += yt - yc;
      ++count;
    }
  }
  if (count == 0) {
    throw data_error("EmptySegment", "segment '" + segment.descriptor() + "' selects no rows");
  }
  return total / static_cast<double>(count);
}

Statistic effect_statistic(const WeightedData& data, const ColumnLayout& layout,
                           const EncodedTable& table, std::uint32_t treatment_level,
                           const Segment& segment, std::optional<std::uint32_t> period,
                           std::size_t kpi) {
  if (data.rows() != table.n_rows() || data.p() != layout.p() || kpi >= data.m) {
    throw config_error("DimensionMismatch", "weighted data does not match the table and layout");
  }
  // Validates the request and rejects empty segments up front.
  (void)contrast_from_means(layout, treatment_level,
                            Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(layout.p())), 0);
  auto sel = segment_selector(table, layout, segment, period);
  if (std::find(sel.begin(), sel.end(), std::uint8_t{1}) == sel.end()) {
    throw data_error("EmptySegment", "segment '" + segment.descriptor() + "' selects no rows",
                     {{"segment", segment.descriptor()}});
  }
  std::vector<std::uint8_t> is_base(layout.p(), 0);
  for (std::size_t j : layout.base_columns()) is_base[j] = 1;

  return [&data, &layout, sel = std::move(sel), is_base = std::move(is_base), treatment_level,
          kpi](const WeightedView& view) {
    const std::size_t p = layout.p();
    std::vector<stats::CompensatedSum> sums(p);
    stats::CompensatedSum sw;
    for (std::size_t i = 0; i < view.rows.size(); ++i) {
      const std::size_t r = view.rows[i];
      if (!sel[r] || view.weights[i] == 0.0) continue;
      const double w = view.weights[i];
      sw.add(w);
      for (std::size_t e = data.design.row_ptr[r]; e < data.design.row_ptr[r + 1]; ++e) {
        const std::uint32_t col = data.design.col_idx[e];
        if (is_base[col]) sums[col].add(w * data.design.values[e]);
      }
    }
    if (sw.value() <= 0.0) throw numeric_error("DegenerateSubset", "no weight inside the segment");
    Eigen::RowVectorXd means = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) means(static_cast<Eigen::Index>(j)) = sums[j].value() / sw.value();
    const ContrastVector cv = contrast_from_means(layout, treatment_level, means, 0);
    try {
      const FitResult f = fit(accumulate_gram(data, Resample{view.rows, view.weights}));
      return cv.c.dot(f.beta.col(static_cast<Eigen::Index>(kpi)));
    } catch (const RankDeficientError& e) {
      throw numeric_error("DegenerateSubset", e.what(), e.context());
    }
  };
}

}  // namespace cfx
