#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfx/design.hpp"
#include "cfx/ingest.hpp"

namespace cfx {

enum class CovKind { homoskedastic, hc0, hc1, clustered };

std::string_view to_string(CovKind kind);
std::optional<CovKind> parse_cov_kind(std::string_view text);

/// Least-squares rows in sufficient-statistic form. Weights are frequency
/// weights: row g stands for weight[g] observations sharing one design row,
/// with response sums sum_y = sum(w * y) and sum_y_sq = sum(w * y^2). Raw
/// rows, compressed groups and bootstrap resamples all use this shape.
struct WeightedData {
  CsrMatrix design;
  std::vector<double> weight;
  std::size_t m = 0;                   // KPI count
  std::vector<double> sum_y;           // rows x m, row-major
  std::vector<double> sum_y_sq;        // rows x m, row-major
  std::vector<std::uint32_t> cluster;  // empty when no cluster ids
  std::size_t n_clusters = 0;

  std::size_t rows() const { return weight.size(); }
  std::size_t p() const { return design.n_cols; }
  bool has_clusters() const { return !cluster.empty(); }
};

/// Unit-weight rows of `table` (one per table row). Cluster ids are attached
/// when the table has a cluster_id column.
WeightedData raw_data(CsrMatrix design, const EncodedTable& table);

/// Rows with arbitrary nonnegative frequency weights and a dense KPI matrix.
WeightedData weighted_rows(CsrMatrix design, const Eigen::MatrixXd& y,
                           std::span<const double> weights);

/// Multiplies the weight (and sums) of `rows[i]` by `counts[i]`; rows not
/// listed are dropped. Used for bootstrap resamples without copying rows.
struct Resample {
  std::span<const std::size_t> rows;
  std::span<const double> counts;
};

struct GramSystem {
  Eigen::MatrixXd xtwx;  // p x p, symmetric
  Eigen::MatrixXd xtwy;  // p x m
  Eigen::VectorXd ytwy;  // m
  double sum_weights = 0.0;
  std::size_t n_effective = 0;  // rows with positive weight
};

/// Weighted cross products with per-chunk compensated summation and a
/// pairwise merge whose shape depends only on the data size, so the result is
/// bitwise identical for any thread count. Errors: DimensionMismatch,
/// NegativeWeight.
GramSystem accumulate_gram(const SparseDesignMatrix& m, const Eigen::MatrixXd& y,
                           std::span<const double> weights);
GramSystem accumulate_gram(const WeightedData& data);
GramSystem accumulate_gram(const WeightedData& data, const Resample& resample);

struct FitOptions {
  double ridge = 0.0;                 // adds ridge * I to X'WX when > 0
  double pivot_tolerance = 1e-12;     // relative to the largest diagonal
  std::vector<std::string> term_names;
};

struct FitResult {
  Eigen::MatrixXd beta;      // p x m
  Eigen::MatrixXd chol;      // lower Cholesky factor of X'WX
  Eigen::MatrixXd xtwx_inv;  // shared by every KPI
  Eigen::VectorXd rss;
  Eigen::VectorXd sigma2;
  double n_obs = 0.0;
  double df_resid = 0.0;
  double ridge = 0.0;
  std::vector<std::string> term_names;
  std::map<std::pair<CovKind, std::size_t>, Eigen::MatrixXd> cov;

  std::size_t p() const { return static_cast<std::size_t>(beta.rows()); }
  std::size_t m() const { return static_cast<std::size_t>(beta.cols()); }
  bool has_covariance(CovKind kind, std::size_t kpi) const;
  /// Throws CovKindUnavailable.
  const Eigen::MatrixXd& covariance(CovKind kind, std::size_t kpi) const;
};

/// Cholesky factorization that detects linearly dependent columns. Throws
/// RankDeficientError naming each dependent column and the earlier columns
/// it is a combination of.
Eigen::MatrixXd checked_cholesky(const Eigen::MatrixXd& a, double pivot_tolerance,
                                 const std::vector<std::string>& names);

/// Solves the normal equations for every KPI with one factorization. sigma2
/// uses the Gram identity rss = y'Wy - 2 b'X'Wy + b'X'WXb. Homoskedastic
/// covariances are stored for every KPI.
FitResult fit(const GramSystem& gram, const FitOptions& options = {});

/// accumulate_gram + fit, with rss recomputed from per-row residual sums
/// (numerically safer than the Gram identity).
FitResult fit(const WeightedData& data, const FitOptions& options = {});

/// Per-KPI covariance matrices:
///   homoskedastic  sigma2 (X'WX)^-1
///   hc0            (X'WX)^-1 [sum_i x_i x_i' e_i^2] (X'WX)^-1
///   hc1            hc0 * n / (n - p)
///   clustered      sandwich with meat sum_c s_c s_c', s_c = sum_{i in c} x_i e_i,
///                  scaled by G/(G-1) * (n-1)/(n-p)
/// Residual sums come from the sufficient statistics, so compressed groups
/// give the same result as the raw rows. Errors: MissingClusterIds.
std::vector<Eigen::MatrixXd> covariance(const FitResult& fit, CovKind kind,
                                        const WeightedData& data);

void add_covariance(FitResult& fit, CovKind kind, const WeightedData& data);

/// Residual sum of squares per KPI, from per-row residual sums.
Eigen::VectorXd residual_sum_of_squares(const Eigen::MatrixXd& beta, const WeightedData& data);

}  // namespace cfx
