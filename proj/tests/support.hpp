#pragma once

// Fixtures and independent dense reference computations shared by the unit
// tests and the acceptance runner.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfx/design.hpp"
#include "cfx/ingest.hpp"
#include "cfx/tsls.hpp"

namespace cfx::testing {

inline Column cat(const std::string& name, ColumnKind kind, const std::vector<std::string>& raw) {
  return encode_categorical(name, kind, raw);
}

inline Column num(const std::string& name, ColumnKind kind, std::vector<double> values) {
  Column c;
  c.name = name;
  c.kind = kind;
  c.values = std::move(values);
  return c;
}

// Two arms, control y = {1, 3}, treated y = {2, 6}.
inline EncodedTable two_arm() {
  return EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"ctl", "ctl", "trt", "trt"}),
                                     num("y", ColumnKind::kpi, {1, 3, 2, 6})});
}

// Saturated 2 x 2 design, cell means 0, 1 (x = a) and 0, 3 (x = b).
inline EncodedTable saturated() {
  return EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"ctl", "trt", "ctl", "trt"}),
                                     cat("x", ColumnKind::categorical, {"a", "a", "b", "b"}),
                                     num("y", ColumnKind::kpi, {0, 1, 0, 3})});
}

inline DesignSpec saturated_spec() {
  DesignSpec s;
  s.treatment = "treatment";
  s.covariates = {"x"};
  s.interact_treatment_covariates = true;
  return s;
}

// Wald example: binary instrument, just identified.
inline EncodedTable wald_table() {
  return EncodedTable::from_columns({cat("z", ColumnKind::instrument, {"0", "0", "1", "1"}),
                                     cat("a", ColumnKind::treatment, {"0", "1", "1", "1"}),
                                     num("y", ColumnKind::kpi, {0, 1, 2, 3})});
}

struct RandomInstance {
  EncodedTable table;
  DesignSpec spec;
};

struct RandomShape {
  std::size_t n = 500;
  std::size_t max_treatments = 4;
  std::size_t max_categorical = 2;
  std::size_t max_levels = 4;
  std::size_t max_numeric = 2;
  std::size_t numeric_values = 0;  // > 0: numeric covariates take this many distinct values
  std::size_t n_kpis = 2;
  bool time = false;
  bool clusters = false;
};

inline std::string level_name(const std::string& prefix, std::size_t i) {
  return prefix + std::to_string(i);
}

// Random design with every treatment level and covariate level present, so
// the interacted model is identified for moderate n.
inline RandomInstance random_instance(std::mt19937_64& rng, const RandomShape& shape) {
  const std::size_t n = shape.n;
  std::uniform_int_distribution<std::size_t> pick_k(2, shape.max_treatments);
  const std::size_t k = pick_k(rng);
  const std::size_t n_cat = std::uniform_int_distribution<std::size_t>(0, shape.max_categorical)(rng);
  const std::size_t n_num = std::uniform_int_distribution<std::size_t>(n_cat == 0 ? 1 : 0, shape.max_numeric)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Column> cols;
  RandomInstance out;
  out.spec.treatment = "treatment";
  out.spec.interact_treatment_covariates = true;

  auto categorical = [&](const std::string& name, ColumnKind kind, std::size_t levels) {
    std::vector<std::string> raw(n);
    std::vector<std::uint32_t> codes(n);
    for (std::size_t i = 0; i < n; ++i) {
      codes[i] = static_cast<std::uint32_t>(i < levels ? i : std::uniform_int_distribution<std::size_t>(0, levels - 1)(rng));
    }
    std::shuffle(codes.begin(), codes.end(), rng);
    for (std::size_t i = 0; i < n; ++i) raw[i] = level_name(name + "_", codes[i]);
    cols.push_back(cat(name, kind, raw));
    return codes;
  };

  const auto arm = categorical("treatment", ColumnKind::treatment, k);
  std::vector<double> signal(n, 0.0);
  for (std::size_t c = 0; c < n_cat; ++c) {
    const std::string name = "c" + std::to_string(c + 1);
    const std::size_t levels = std::uniform_int_distribution<std::size_t>(2, shape.max_levels)(rng);
    const auto codes = categorical(name, ColumnKind::categorical, levels);
    out.spec.covariates.push_back(name);
    for (std::size_t i = 0; i < n; ++i) signal[i] += 0.3 * static_cast<double>(codes[i]) * (1.0 + static_cast<double>(arm[i]));
  }
  for (std::size_t j = 0; j < n_num; ++j) {
    const std::string name = "x" + std::to_string(j + 1);
    std::vector<double> v(n);
    for (auto& x : v) {
      x = shape.numeric_values > 0
              ? static_cast<double>(std::uniform_int_distribution<std::size_t>(0, shape.numeric_values - 1)(rng)) * 0.5
              : normal(rng);
    }
    out.spec.covariates.push_back(name);
    for (std::size_t i = 0; i < n; ++i) signal[i] += 0.2 * v[i] * static_cast<double>(arm[i]);
    cols.push_back(num(name, ColumnKind::numeric, std::move(v)));
  }
  if (shape.time) {
    const auto period = categorical("period", ColumnKind::time_period, 3);
    out.spec.time = "period";
    out.spec.interact_treatment_time = true;
    for (std::size_t i = 0; i < n; ++i) signal[i] += 0.1 * static_cast<double>(period[i] * arm[i]);
  }
  if (shape.clusters) categorical("cluster", ColumnKind::cluster_id, std::max<std::size_t>(2, n / 10));
  for (std::size_t m = 0; m < shape.n_kpis; ++m) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = 1.0 + static_cast<double>(m) + 0.5 * static_cast<double>(arm[i]) + signal[i] + normal(rng) * (1.0 + 0.5 * static_cast<double>(arm[i]));
    }
    cols.push_back(num("y" + std::to_string(m + 1), ColumnKind::kpi, std::move(y)));
  }
  out.table = EncodedTable::from_columns(std::move(cols));
  return out;
}

struct IvInstance {
  EncodedTable table;
  TslsSpec spec;
};

// Endogenous multi-level treatment driven by a categorical instrument and an
// unobserved confounder that also enters y.
inline IvInstance random_iv_instance(std::mt19937_64& rng, std::size_t n) {
  const std::size_t k = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
  const std::size_t zl = std::uniform_int_distribution<std::size_t>(k, k + 2)(rng);
  const std::size_t gl = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::string> z(n), a(n), g(n);
  std::vector<double> x(n), y(n), y2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t zi = i < zl ? i : std::uniform_int_distribution<std::size_t>(0, zl - 1)(rng);
    const std::size_t gi = std::uniform_int_distribution<std::size_t>(0, gl - 1)(rng);
    const double u = normal(rng);
    // Complier: takes the arm suggested by the instrument; otherwise picks by u.
    std::size_t ai = zi % k;
    if (unif(rng) < 0.4) ai = u > 0.0 ? k - 1 : 0;
    if (i < k) ai = i;
    z[i] = "z" + std::to_string(zi);
    a[i] = "a" + std::to_string(ai);
    g[i] = "g" + std::to_string(gi);
    x[i] = normal(rng);
    y[i] = 1.0 + 0.7 * static_cast<double>(ai) + 0.3 * x[i] + 0.2 * static_cast<double>(gi) + u + 0.5 * normal(rng);
    y2[i] = -static_cast<double>(ai) + x[i] * x[i] + normal(rng);
  }
  IvInstance out;
  out.table = EncodedTable::from_columns({cat("z", ColumnKind::instrument, z), cat("a", ColumnKind::treatment, a),
                                          cat("g", ColumnKind::categorical, g), num("x", ColumnKind::numeric, x),
                                          num("y", ColumnKind::kpi, y), num("y2", ColumnKind::kpi, y2)});
  out.spec.treatment = "a";
  out.spec.instruments = {"z"};
  out.spec.covariates = {"x", "g"};
  return out;
}

inline Eigen::MatrixXd dense_design(const EncodedTable& table, const ColumnLayout& layout) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(table.n_rows()), static_cast<Eigen::Index>(layout.p()));
  std::vector<Entry> row;
  for (std::size_t i = 0; i < table.n_rows(); ++i) {
    row.clear();
    layout.emit_row(table, i, row);
    for (const auto& e : row) m(static_cast<Eigen::Index>(i), e.col) = e.value;
  }
  return m;
}

inline Eigen::MatrixXd kpi_matrix(const EncodedTable& table) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(table.n_rows()), static_cast<Eigen::Index>(table.n_kpis()));
  for (std::size_t j = 0; j < table.n_kpis(); ++j) {
    for (std::size_t i = 0; i < table.n_rows(); ++i) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = table.kpi(j).values[i];
  }
  return y;
}

// Textbook dense OLS with QR; covariance matrices per KPI.
struct DenseOls {
  Eigen::MatrixXd beta;
  std::vector<Eigen::MatrixXd> homoskedastic;
  std::vector<Eigen::MatrixXd> hc0;
  std::vector<Eigen::MatrixXd> clustered_meat;  // empty unless clusters given
  Eigen::MatrixXd bread;
};

inline DenseOls dense_ols(const Eigen::MatrixXd& m, const Eigen::MatrixXd& y,
                          const std::vector<std::uint32_t>& cluster = {}) {
  DenseOls out;
  out.beta = m.colPivHouseholderQr().solve(y);
  out.bread = (m.transpose() * m).inverse();
  const double n = static_cast<double>(m.rows());
  const double p = static_cast<double>(m.cols());
  const Eigen::MatrixXd e = y - m * out.beta;
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double s2 = e.col(j).squaredNorm() / (n - p);
    out.homoskedastic.push_back(s2 * out.bread);
    const Eigen::MatrixXd meat = m.transpose() * e.col(j).array().square().matrix().asDiagonal() * m;
    out.hc0.push_back(out.bread * meat * out.bread);
    if (!cluster.empty()) {
      const std::size_t g = *std::max_element(cluster.begin(), cluster.end()) + 1;
      Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g), m.cols());
      for (Eigen::Index i = 0; i < m.rows(); ++i) scores.row(cluster[static_cast<std::size_t>(i)]) += e(i, j) * m.row(i);
      out.clustered_meat.push_back(scores.transpose() * scores);
    }
  }
  return out;
}

inline double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  return scale == 0.0 ? 0.0 : (a - b).cwiseAbs().maxCoeff() / scale;
}

// Best summed effect over every eligibility-respecting deterministic policy.
template <class Effects>
double exhaustive_best(const Effects& fx) {
  double best = -1e300;
  std::vector<std::size_t> choice(fx.n_users, 0);
  while (true) {
    bool ok = true;
    double total = 0.0;
    for (std::size_t j = 0; j < fx.n_users && ok; ++j) {
      ok = fx.is_available(j, choice[j]);
      if (ok) total += fx(j, choice[j]);
    }
    if (ok) best = std::max(best, total);
    std::size_t pos = 0;
    while (pos < fx.n_users && ++choice[pos] == fx.n_actions) choice[pos++] = 0;
    if (pos == fx.n_users) break;
  }
  return best;
}

}  // namespace cfx::testing
