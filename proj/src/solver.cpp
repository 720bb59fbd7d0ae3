#include "cfx/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfx/error.hpp"
#include "gram_impl.hpp"
#include "cfx/parallel.hpp"
#include "cfx/stats.hpp"

namespace cfx {
namespace {

constexpr std::pair<CovKind, std::string_view> kCovNames[] = {
    {CovKind::homoskedastic, "homoskedastic"},
    {CovKind::hc0, "HC0"},
    {CovKind::hc1, "HC1"},
    {CovKind::clustered, "clustered"},
};

using detail::KahanBuffer;
using detail::max_partials;
using detail::symmetrize_from_lower;

// Residual sums for one row and KPI: squared-residual sum and residual sum.
struct RowResidual {
  double squares;
  double sum;
};

inline RowResidual row_residual(double w, double sy, double syy, double yhat) {
  if (w <= 0.0) return {0.0, 0.0};
  const double score = sy - w * yhat;
  const double within = std::max(0.0, syy - sy * sy / w);
  return {within + score * score / w, score};
}

inline double predict(const WeightedData& d, std::size_t r, const Eigen::MatrixXd& beta,
                      std::size_t j) {
  double yhat = 0.0;
  for (std::size_t k = d.design.row_ptr[r]; k < d.design.row_ptr[r + 1]; ++k) {
    yhat += d.design.values[k] * beta(d.design.col_idx[k], static_cast<Eigen::Index>(j));
  }
  return yhat;
}

std::vector<Eigen::MatrixXd> hc0_meat(const Eigen::MatrixXd& beta, const WeightedData& d) {
  const std::size_t p = d.p();
  const std::size_t m = d.m;
  const auto ranges = parallel::chunks(d.rows(), 4096, max_partials(p * p * m));
  std::vector<std::vector<Eigen::MatrixXd>> parts(ranges.size());

  parallel::for_each(ranges.size(), [&](std::size_t c) {
    std::vector<KahanBuffer> acc(m, KahanBuffer(p * p));
    for (std::size_t r = ranges[c].begin; r < ranges[c].end; ++r) {
      const std::size_t b0 = d.design.row_ptr[r], b1 = d.design.row_ptr[r + 1];
      for (std::size_t j = 0; j < m; ++j) {
        const double yhat = predict(d, r, beta, j);
        const double e2 = row_residual(d.weight[r], d.sum_y[r * m + j], d.sum_y_sq[r * m + j], yhat).squares;
        if (e2 == 0.0) continue;
        for (std::size_t a = b0; a < b1; ++a) {
          const double va = e2 * d.design.values[a];
          for (std::size_t b = b0; b <= a; ++b) {
            acc[j].add(d.design.col_idx[a] + p * d.design.col_idx[b], va * d.design.values[b]);
          }
        }
      }
    }
    parts[c].resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      parts[c][j].setZero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
      for (std::size_t col = 0; col < p; ++col) {
        for (std::size_t row = col; row < p; ++row) parts[c][j](row, col) = acc[j].value(row + p * col);
      }
    }
  });

  std::vector<Eigen::MatrixXd> meat;
  if (parts.empty()) {
    meat.assign(m, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)));
    return meat;
  }
  meat = parallel::tree_reduce(std::move(parts), [](auto& a, auto& b) {
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
  });
  for (auto& mj : meat) symmetrize_from_lower(mj);
  return meat;
}

struct ClusterMeat {
  std::vector<Eigen::MatrixXd> meat;
  std::size_t n_clusters = 0;
};

ClusterMeat cluster_meat(const Eigen::MatrixXd& beta, const WeightedData& d) {
  const std::size_t p = d.p();
  const std::size_t m = d.m;
  const std::size_t g_count = d.n_clusters;

  // Counting sort of rows by cluster id.
  std::vector<std::size_t> start(g_count + 1, 0);
  for (auto c : d.cluster) ++start[c + 1];
  for (std::size_t g = 0; g < g_count; ++g) start[g + 1] += start[g];
  std::vector<std::size_t> order(d.rows());
  {
    std::vector<std::size_t> cursor(start.begin(), start.end() - 1);
    for (std::size_t r = 0; r < d.rows(); ++r) order[cursor[d.cluster[r]]++] = r;
  }

  const auto ranges = parallel::chunks(g_count, 256, max_partials(p * p * m));
  struct Part {
    std::vector<Eigen::MatrixXd> meat;
    std::size_t active = 0;
  };
  std::vector<Part> parts(ranges.size());

  parallel::for_each(ranges.size(), [&](std::size_t c) {
    Part& part = parts[c];
    part.meat.assign(m, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)));
    std::vector<double> score(p * m, 0.0);
    std::vector<std::uint8_t> mark(p, 0);
    std::vector<std::size_t> touched;
    for (std::size_t g = ranges[c].begin; g < ranges[c].end; ++g) {
      touched.clear();
      bool active = false;
      for (std::size_t k = start[g]; k < start[g + 1]; ++k) {
        const std::size_t r = order[k];
        if (d.weight[r] <= 0.0) continue;
        active = true;
        for (std::size_t j = 0; j < m; ++j) {
          const double yhat = predict(d, r, beta, j);
          const double s = row_residual(d.weight[r], d.sum_y[r * m + j], d.sum_y_sq[r * m + j], yhat).sum;
          for (std::size_t a = d.design.row_ptr[r]; a < d.design.row_ptr[r + 1]; ++a) {
            const std::size_t col = d.design.col_idx[a];
            if (!mark[col]) {
              mark[col] = 1;
              touched.push_back(col);
            }
            score[col * m + j] += d.design.values[a] * s;
          }
        }
      }
      if (active) ++part.active;
      std::sort(touched.begin(), touched.end());
      for (std::size_t j = 0; j < m; ++j) {
        auto& mj = part.meat[j];
        for (std::size_t a : touched) {
          const double sa = score[a * m + j];
          for (std::size_t b : touched) {
            mj(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += sa * score[b * m + j];
          }
        }
      }
      for (std::size_t a : touched) {
        mark[a] = 0;
        for (std::size_t j = 0; j < m; ++j) score[a * m + j] = 0.0;
      }
    }
  });

  ClusterMeat out;
  if (parts.empty()) {
    out.meat.assign(m, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)));
    return out;
  }
  Part total = parallel::tree_reduce(std::move(parts), [](Part& a, Part& b) {
    for (std::size_t j = 0; j < a.meat.size(); ++j) a.meat[j] += b.meat[j];
    a.active += b.active;
  });
  out.meat = std::move(total.meat);
  out.n_clusters = total.active;
  return out;
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& meat) {
  Eigen::MatrixXd v = bread * meat * bread;
  return 0.5 * (v + v.transpose());
}

std::string column_name(const std::vector<std::string>& names, std::size_t j) {
  return j < names.size() ? names[j] : "column " + std::to_string(j);
}

}  // namespace

std::string_view to_string(CovKind kind) {
  for (const auto& [k, name] : kCovNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<CovKind> parse_cov_kind(std::string_view text) {
  for (const auto& [k, name] : kCovNames) {
    if (name == text) return k;
  }
  if (text == "hc0") return CovKind::hc0;
  if (text == "hc1") return CovKind::hc1;
  return std::nullopt;
}

WeightedData raw_data(CsrMatrix design, const EncodedTable& table) {
  WeightedData d;
  const std::size_t n = table.n_rows();
  if (design.n_rows != n) {
    throw data_error("DimensionMismatch", "design rows do not match table rows");
  }
  d.design = std::move(design);
  d.weight.assign(n, 1.0);
  d.m = table.n_kpis();
  d.sum_y.resize(n * d.m);
  d.sum_y_sq.resize(n * d.m);
  for (std::size_t j = 0; j < d.m; ++j) {
    const auto& y = table.kpi(j).values;
    for (std::size_t i = 0; i < n; ++i) {
      d.sum_y[i * d.m + j] = y[i];
      d.sum_y_sq[i * d.m + j] = y[i] * y[i];
    }
  }
  if (const Column* c = table.cluster_column()) {
    d.cluster = c->codes;
    d.n_clusters = c->levels.size();
  }
  return d;
}

WeightedData weighted_rows(CsrMatrix design, const Eigen::MatrixXd& y,
                           std::span<const double> weights) {
  const std::size_t n = design.n_rows;
  if (static_cast<std::size_t>(y.rows()) != n || weights.size() != n) {
    throw data_error("DimensionMismatch", "design, response and weight lengths differ",
                     {{"design_rows", std::to_string(n)},
                      {"y_rows", std::to_string(y.rows())},
                      {"weights", std::to_string(weights.size())}});
  }
  WeightedData d;
  d.design = std::move(design);
  d.weight.assign(weights.begin(), weights.end());
  d.m = static_cast<std::size_t>(y.cols());
  d.sum_y.resize(n * d.m);
  d.sum_y_sq.resize(n * d.m);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] < 0.0 || !std::isfinite(weights[i])) {
      throw data_error("NegativeWeight", "weights must be finite and nonnegative",
                       {{"row", std::to_string(i)}});
    }
    for (std::size_t j = 0; j < d.m; ++j) {
      const double v = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      d.sum_y[i * d.m + j] = weights[i] * v;
      d.sum_y_sq[i * d.m + j] = weights[i] * v * v;
    }
  }
  return d;
}

GramSystem accumulate_gram(const SparseDesignMatrix& m, const Eigen::MatrixXd& y,
                           std::span<const double> weights) {
  return accumulate_gram(weighted_rows(to_csr(m), y, weights));
}

GramSystem accumulate_gram(const WeightedData& data) {
  return detail::accumulate(detail::WeightedDataSource{data}, data.rows(), data.p(), data.m);
}

GramSystem accumulate_gram(const WeightedData& data, const Resample& resample) {
  if (resample.rows.size() != resample.counts.size()) {
    throw data_error("DimensionMismatch", "resample rows and counts differ in length");
  }
  return detail::accumulate(detail::ResampleSource{data, resample}, resample.rows.size(),
                            data.p(), data.m);
}

bool FitResult::has_covariance(CovKind kind, std::size_t kpi) const {
  return cov.contains({kind, kpi});
}

const Eigen::MatrixXd& FitResult::covariance(CovKind kind, std::size_t kpi) const {
  auto it = cov.find({kind, kpi});
  if (it == cov.end()) {
    throw config_error("CovKindUnavailable",
                       std::string(to_string(kind)) + " covariance was not computed",
                       {{"cov_kind", std::string(to_string(kind))}, {"kpi", std::to_string(kpi)}});
  }
  return it->second;
}

Eigen::MatrixXd checked_cholesky(const Eigen::MatrixXd& a, double pivot_tolerance,
                                 const std::vector<std::string>& names) {
  const Eigen::Index p = a.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p, p);
  double max_diag = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) max_diag = std::max(max_diag, a(j, j));
  const double threshold = pivot_tolerance * max_diag;

  std::vector<Eigen::Index> accepted;
  std::vector<Eigen::Index> dependent;
  for (Eigen::Index j = 0; j < p; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > threshold) || max_diag <= 0.0) {
      dependent.push_back(j);
      continue;
    }
    const double root = std::sqrt(d);
    l(j, j) = root;
    for (Eigen::Index i = j + 1; i < p; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / root;
    }
    accepted.push_back(j);
  }
  if (dependent.empty()) return l;

  // Express each dependent column through the accepted ones before it:
  // a_SS coef = a_Sj, solved with the partial factor.
  std::vector<std::size_t> involved;
  for (Eigen::Index j : dependent) {
    involved.push_back(static_cast<std::size_t>(j));
    std::vector<Eigen::Index> s;
    for (Eigen::Index i : accepted) {
      if (i < j) s.push_back(i);
    }
    const auto n = static_cast<Eigen::Index>(s.size());
    if (n == 0 || a(j, j) <= 0.0) continue;
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      double v = a(s[r], j);
      for (Eigen::Index k = 0; k < r; ++k) v -= l(s[r], s[k]) * y(k);
      y(r) = v / l(s[r], s[r]);
    }
    Eigen::VectorXd coef(n);
    for (Eigen::Index r = n - 1; r >= 0; --r) {
      double v = y(r);
      for (Eigen::Index k = r + 1; k < n; ++k) v -= l(s[k], s[r]) * coef(k);
      coef(r) = v / l(s[r], s[r]);
    }
    const double scale = std::sqrt(a(j, j));
    for (Eigen::Index r = 0; r < n; ++r) {
      if (std::abs(coef(r)) * std::sqrt(a(s[r], s[r])) > 1e-6 * scale) {
        involved.push_back(static_cast<std::size_t>(s[r]));
      }
    }
  }
  std::sort(involved.begin(), involved.end());
  involved.erase(std::unique(involved.begin(), involved.end()), involved.end());
  std::vector<std::string> labels;
  for (auto j : involved) labels.push_back(column_name(names, j));
  throw RankDeficientError(std::move(involved), std::move(labels));
}

FitResult fit(const GramSystem& gram, const FitOptions& options) {
  const Eigen::Index p = gram.xtwx.rows();
  const Eigen::Index m = gram.xtwy.cols();
  Eigen::MatrixXd a = gram.xtwx;
  if (options.ridge > 0.0) a.diagonal().array() += options.ridge;

  FitResult f;
  f.ridge = options.ridge;
  f.term_names = options.term_names;
  f.chol = checked_cholesky(a, options.pivot_tolerance, options.term_names);
  const Eigen::MatrixXd& chol = f.chol;
  const auto lower = chol.triangularView<Eigen::Lower>();
  f.beta = lower.transpose().solve(lower.solve(gram.xtwy));
  const Eigen::MatrixXd l_inv = lower.solve(Eigen::MatrixXd::Identity(p, p));
  f.xtwx_inv = l_inv.transpose() * l_inv;

  f.n_obs = gram.sum_weights;
  f.df_resid = gram.sum_weights - static_cast<double>(p);
  f.rss.resize(m);
  f.sigma2.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto b = f.beta.col(j);
    const double rss = gram.ytwy(j) - 2.0 * b.dot(gram.xtwy.col(j)) + b.dot(gram.xtwx * b);
    f.rss(j) = std::max(0.0, rss);
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    f.sigma2(j) = f.df_resid > 0.0 ? f.rss(j) / f.df_resid
                                   : std::numeric_limits<double>::quiet_NaN();
    f.cov[{CovKind::homoskedastic, static_cast<std::size_t>(j)}] = f.sigma2(j) * f.xtwx_inv;
  }
  return f;
}

Eigen::VectorXd residual_sum_of_squares(const Eigen::MatrixXd& beta, const WeightedData& d) {
  const std::size_t m = d.m;
  const auto ranges = parallel::chunks(d.rows());
  std::vector<std::vector<stats::CompensatedSum>> parts(ranges.size());
  parallel::for_each(ranges.size(), [&](std::size_t c) {
    auto& acc = parts[c];
    acc.assign(m, {});
    for (std::size_t r = ranges[c].begin; r < ranges[c].end; ++r) {
      for (std::size_t j = 0; j < m; ++j) {
        const double yhat = predict(d, r, beta, j);
        acc[j].add(row_residual(d.weight[r], d.sum_y[r * m + j], d.sum_y_sq[r * m + j], yhat).squares);
      }
    }
  });
  Eigen::VectorXd rss = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  if (parts.empty()) return rss;
  auto total = parallel::tree_reduce(std::move(parts), [](auto& a, auto& b) {
    for (std::size_t j = 0; j < a.size(); ++j) a[j].merge(b[j]);
  });
  for (std::size_t j = 0; j < m; ++j) rss(static_cast<Eigen::Index>(j)) = total[j].value();
  return rss;
}

FitResult fit(const WeightedData& data, const FitOptions& options) {
  FitResult f = fit(accumulate_gram(data), options);
  f.rss = residual_sum_of_squares(f.beta, data);
  for (Eigen::Index j = 0; j < f.rss.size(); ++j) {
    f.sigma2(j) = f.df_resid > 0.0 ? f.rss(j) / f.df_resid
                                   : std::numeric_limits<double>::quiet_NaN();
    f.cov[{CovKind::homoskedastic, static_cast<std::size_t>(j)}] = f.sigma2(j) * f.xtwx_inv;
  }
  return f;
}

std::vector<Eigen::MatrixXd> covariance(const FitResult& f, CovKind kind,
                                        const WeightedData& data) {
  const std::size_t m = f.m();
  const double n = f.n_obs;
  const double p = static_cast<double>(f.p());
  std::vector<Eigen::MatrixXd> out;
  switch (kind) {
    case CovKind::homoskedastic:
      for (std::size_t j = 0; j < m; ++j) out.push_back(f.sigma2(static_cast<Eigen::Index>(j)) * f.xtwx_inv);
      return out;
    case CovKind::hc0:
    case CovKind::hc1: {
      const double factor = kind == CovKind::hc1 ? n / (n - p) : 1.0;
      for (const auto& meat : hc0_meat(f.beta, data)) out.push_back(factor * sandwich(f.xtwx_inv, meat));
      return out;
    }
    case CovKind::clustered: {
      if (!data.has_clusters()) {
        throw config_error("MissingClusterIds", "clustered covariance needs a cluster_id column");
      }
      const ClusterMeat cm = cluster_meat(f.beta, data);
      const double g = static_cast<double>(cm.n_clusters);
      const double factor = (g / (g - 1.0)) * ((n - 1.0) / (n - p));
      for (const auto& meat : cm.meat) out.push_back(factor * sandwich(f.xtwx_inv, meat));
      return out;
    }
  }
  return out;
}

void add_covariance(FitResult& f, CovKind kind, const WeightedData& data) {
  auto covs = covariance(f, kind, data);
  for (std::size_t j = 0; j < covs.size(); ++j) f.cov[{kind, j}] = std::move(covs[j]);
}

}  // namespace cfx
