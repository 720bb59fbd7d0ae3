#pragma once

// Chunked, compensated Gram accumulation shared by the OLS and 2SLS paths.

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "cfx/error.hpp"
#include "cfx/parallel.hpp"
#include "cfx/solver.hpp"
#include "cfx/stats.hpp"

namespace cfx::detail {

inline constexpr std::size_t kPartialBudgetBytes = std::size_t{64} << 20;

inline std::size_t max_partials(std::size_t cells) {
  const std::size_t per = std::max<std::size_t>(1, cells * sizeof(double));
  return std::clamp<std::size_t>(kPartialBudgetBytes / per, 1, 64);
}

// Dense accumulator with Kahan compensation per cell.
class KahanBuffer {
 public:
  KahanBuffer() = default;
  explicit KahanBuffer(std::size_t size) : sum_(size, 0.0), comp_(size, 0.0) {}

  void add(std::size_t i, double x) {
    const double y = x - comp_[i];
    const double t = sum_[i] + y;
    comp_[i] = (t - sum_[i]) - y;
    sum_[i] = t;
  }
  double value(std::size_t i) const { return sum_[i] - comp_[i]; }
  void merge(const KahanBuffer& other) {
    for (std::size_t i = 0; i < sum_.size(); ++i) add(i, other.value(i));
  }

 private:
  std::vector<double> sum_;
  std::vector<double> comp_;
};

inline void symmetrize_from_lower(Eigen::MatrixXd& a) {
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = j + 1; i < a.rows(); ++i) a(j, i) = a(i, j);
  }
}

/// One contribution: a sparse design row (columns increasing), its frequency
/// weight, response sums, and a multiplier applied to all of them.
struct RowView {
  const std::uint32_t* cols = nullptr;
  const double* vals = nullptr;
  std::size_t nnz = 0;
  double weight = 0.0;
  const double* sum_y = nullptr;
  const double* sum_y_sq = nullptr;
  double scale = 1.0;
  std::size_t row = 0;
};

struct WeightedDataSource {
  const WeightedData& d;
  struct Scratch {};

  RowView row(std::size_t r, Scratch&) const {
    const std::size_t b = d.design.row_ptr[r];
    return {d.design.col_idx.data() + b, d.design.values.data() + b,
            d.design.row_ptr[r + 1] - b, d.weight[r], d.sum_y.data() + r * d.m,
            d.sum_y_sq.data() + r * d.m, 1.0, r};
  }
};

struct ResampleSource {
  const WeightedData& d;
  const Resample& resample;
  struct Scratch {};

  RowView row(std::size_t i, Scratch&) const {
    WeightedDataSource::Scratch none;
    RowView v = WeightedDataSource{d}.row(resample.rows[i], none);
    v.scale = resample.counts[i];
    return v;
  }
};

struct GramPartial {
  Eigen::MatrixXd xtwx;
  Eigen::MatrixXd xtwy;
  Eigen::VectorXd ytwy;
  double sum_weights = 0.0;
  std::size_t n_effective = 0;
};

template <class Source>
GramSystem accumulate(const Source& source, std::size_t n_items, std::size_t p, std::size_t m) {
  const auto ranges = parallel::chunks(n_items, 4096, max_partials(p * p + p * m));
  std::vector<GramPartial> parts(ranges.size());

  parallel::for_each(ranges.size(), [&](std::size_t c) {
    KahanBuffer xx(p * p), xy(p * m), yy(m);
    stats::CompensatedSum sw;
    std::size_t n_eff = 0;
    typename Source::Scratch scratch;
    for (std::size_t i = ranges[c].begin; i < ranges[c].end; ++i) {
      const RowView v = source.row(i, scratch);
      const double w = v.weight * v.scale;
      if (w < 0.0 || !(w == w)) {
        throw data_error("NegativeWeight", "weights must be nonnegative",
                         {{"row", std::to_string(v.row)}});
      }
      if (w == 0.0) continue;
      ++n_eff;
      sw.add(w);
      for (std::size_t a = 0; a < v.nnz; ++a) {
        const double wa = w * v.vals[a];
        const std::size_t col_a = v.cols[a];
        for (std::size_t b = 0; b <= a; ++b) xx.add(col_a + p * v.cols[b], wa * v.vals[b]);
        for (std::size_t j = 0; j < m; ++j) xy.add(col_a + p * j, v.scale * v.sum_y[j] * v.vals[a]);
      }
      for (std::size_t j = 0; j < m; ++j) yy.add(j, v.scale * v.sum_y_sq[j]);
    }
    GramPartial& out = parts[c];
    out.xtwx.setZero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t i = j; i < p; ++i) out.xtwx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xx.value(i + p * j);
    }
    out.xtwy.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < p; ++i) out.xtwy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xy.value(i + p * j);
    }
    out.ytwy.resize(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) out.ytwy(static_cast<Eigen::Index>(j)) = yy.value(j);
    out.sum_weights = sw.value();
    out.n_effective = n_eff;
  });

  GramSystem g;
  if (parts.empty()) {
    g.xtwx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    g.xtwy = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(m));
    g.ytwy = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    return g;
  }
  GramPartial total = parallel::tree_reduce(std::move(parts), [](GramPartial& a, GramPartial& b) {
    a.xtwx += b.xtwx;
    a.xtwy += b.xtwy;
    a.ytwy += b.ytwy;
    a.sum_weights += b.sum_weights;
    a.n_effective += b.n_effective;
  });
  symmetrize_from_lower(total.xtwx);
  g.xtwx = std::move(total.xtwx);
  g.xtwy = std::move(total.xtwy);
  g.ytwy = std::move(total.ytwy);
  g.sum_weights = total.sum_weights;
  g.n_effective = total.n_effective;
  return g;
}

}  // namespace cfx::detail
