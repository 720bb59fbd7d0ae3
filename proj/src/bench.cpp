#include "cfx/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "cfx/compress.hpp"
#include "cfx/effects.hpp"
#include "cfx/error.hpp"
#include "cfx/memtrack.hpp"
#include "cfx/solver.hpp"
#include "cfx/tsls.hpp"

namespace cfx {
namespace {

template <class F>
PhaseStat timed(std::string name, F&& body) {
  memtrack::Scope scope;
  const auto t0 = std::chrono::steady_clock::now();
  body();
  const auto t1 = std::chrono::steady_clock::now();
  return {std::move(name), std::chrono::duration<double>(t1 - t0).count(), scope.peak_delta()};
}

std::vector<std::string> segment_columns(const SyntheticConfig& cfg) {
  std::vector<std::string> out;
  for (std::size_t s = 0; s < cfg.segment_levels.size(); ++s) out.push_back("seg" + std::to_string(s + 1));
  return out;
}

}  // namespace

double relative_difference(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

CateBench bench_cates(const SyntheticConfig& config, std::size_t naive_cates) {
  const EncodedTable table = synthetic_table(config);
  CateBench out;
  out.n = table.n_rows();

  ColumnLayout layout;
  SparseDesignMatrix m;
  out.phases.push_back(timed("design", [&] {
    layout = build_layout(synthetic_design(config, true), table);
    m = build_design(table, layout);
  }));
  out.p = layout.p();

  WeightedData data;
  GramSystem gram;
  FitResult f;
  out.phases.push_back(timed("accumulate", [&] {
    data = raw_data(to_csr(m), table);
    gram = accumulate_gram(data);
  }));
  out.phases.push_back(timed("factor_solve", [&] {
    FitOptions opts;
    opts.term_names = layout.names();
    f = fit(gram, opts);
  }));

  std::vector<EffectEstimate> est;
  SweepRequest req;
  req.segment_by = segment_columns(config);
  req.kpis = {0};
  out.phases.push_back(timed("contrast_effects", [&] { est = effect_sweep(f, layout, m, table, req); }));
  out.n_cates = est.size();
  for (const auto& e : est) out.estimates.push_back(e.point);
  out.contrast_effects_seconds = out.phases.back().seconds;
  out.contrast_total_seconds = 0.0;
  for (const auto& ph : out.phases) out.contrast_total_seconds += ph.seconds;

  const std::size_t run = std::min(naive_cates, est.size());
  if (run > 0) {
    std::vector<double> naive(run);
    out.phases.push_back(timed("naive_effects", [&] {
      for (std::size_t i = 0; i < run; ++i) {
        naive[i] = naive_counterfactual_oracle(f, layout, table, est[i].treatment_level,
                                               Segment::parse(est[i].segment), std::nullopt, 0);
      }
    }));
    for (std::size_t i = 0; i < run; ++i) {
      out.max_rel_diff = std::max(out.max_rel_diff, relative_difference(est[i].point, naive[i]));
    }
    out.naive_cates_run = run;
    out.naive_extrapolated = run < est.size();
    out.naive_effects_seconds = out.phases.back().seconds * static_cast<double>(est.size()) / static_cast<double>(run);
    out.speedup = out.contrast_effects_seconds > 0.0 ? out.naive_effects_seconds / out.contrast_effects_seconds : 0.0;
  }
  return out;
}

CompressionBench bench_compression(const SyntheticConfig& config) {
  const EncodedTable table = synthetic_table(config);
  const ColumnLayout layout = build_layout(synthetic_design(config, true), table);
  CompressionBench out;
  out.n = table.n_rows();
  out.p = layout.p();
  FitOptions opts;
  opts.term_names = layout.names();

  CompressedDataset cd;
  out.phases.push_back(timed("compress", [&] { cd = compress(table, layout); }));
  out.groups = cd.groups();
  out.ratio = compression_ratio(cd);

  const WeightedData raw = raw_data(build_design_csr(table, layout), table);
  FitResult raw_fit, comp_fit;
  out.phases.push_back(timed("raw_fit", [&] { raw_fit = fit(raw, opts); }));
  out.phases.push_back(timed("compressed_fit", [&] { comp_fit = fit(cd.data, opts); }));
  out.speedup = out.phases[2].seconds > 0.0 ? out.phases[1].seconds / out.phases[2].seconds : 0.0;
  for (Eigen::Index i = 0; i < raw_fit.beta.size(); ++i) {
    out.max_rel_diff = std::max(out.max_rel_diff, relative_difference(raw_fit.beta(i), comp_fit.beta(i)));
  }
  for (Eigen::Index i = 0; i < comp_fit.beta.rows(); ++i) out.beta.push_back(comp_fit.beta(i, 0));
  return out;
}

TslsBench bench_tsls(const SyntheticConfig& config, bool run_dense_oracle) {
  if (config.n_instrument_levels == 0) {
    throw config_error("InvalidSynthetic", "the 2SLS benchmark needs instrument levels");
  }
  const EncodedTable table = synthetic_table(config);
  TslsSpec spec;
  spec.treatment = "treatment";
  spec.instruments = {"z"};
  for (std::size_t s = 0; s < config.segment_levels.size(); ++s) spec.covariates.push_back("seg" + std::to_string(s + 1));
  for (std::size_t j = 0; j < config.n_numeric; ++j) spec.covariates.push_back("x" + std::to_string(j + 1));

  TslsBench out;
  out.n = table.n_rows();
  out.n_treatments = config.n_treatments;
  out.dense_fitted_bytes = out.n * (config.n_treatments - 1) * sizeof(double);
  TslsFit f;
  const PhaseStat ph = timed("tsls", [&] { f = fit_2sls(table, spec); });
  out.seconds = ph.seconds;
  out.peak_bytes = ph.peak_bytes;
  out.p = f.layout.p();
  out.sparse_input_bytes = f.sparse_input_bytes;
  for (Eigen::Index i = 0; i < f.beta.rows(); ++i) out.beta.push_back(f.beta(i, 0));
  out.first_stage_f = f.first_stage_f;

  if (run_dense_oracle) {
    out.oracle_n = std::min(out.n, kDenseTslsMaxRows);
    std::vector<std::size_t> rows(out.oracle_n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const EncodedTable small = table.select_rows(rows);
    const PhaseStat oph = timed("tsls_dense", [&] { (void)dense_2sls_oracle(small, spec); });
    out.oracle_peak_bytes = oph.peak_bytes;
    out.oracle_sparse_input_bytes = fit_2sls(small, spec).sparse_input_bytes;
  }
  return out;
}

}  // namespace cfx
