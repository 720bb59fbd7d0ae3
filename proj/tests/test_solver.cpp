#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cfx/error.hpp"
#include "cfx/parallel.hpp"
#include "cfx/solver.hpp"
#include "support.hpp"

using namespace cfx;
using namespace cfx::testing;

namespace {

DesignSpec plain(std::vector<std::string> covariates = {}) {
  DesignSpec s;
  s.treatment = "treatment";
  s.covariates = std::move(covariates);
  return s;
}

FitResult fit_table(const EncodedTable& t, const DesignSpec& spec) {
  const ColumnLayout l = build_layout(spec, t);
  FitOptions o;
  o.term_names = l.names();
  return fit(raw_data(build_design_csr(t, l), t), o);
}

}  // namespace

TEST_CASE("two-arm normal equations and estimates") {
  const EncodedTable t = two_arm();
  const ColumnLayout l = build_layout(plain(), t);
  const WeightedData data = raw_data(build_design_csr(t, l), t);
  const GramSystem g = accumulate_gram(data);
  CHECK(g.xtwx == (Eigen::Matrix2d() << 4, 2, 2, 2).finished());
  CHECK(g.xtwy.col(0) == Eigen::Vector2d(12, 8));
  CHECK(g.ytwy(0) == 50.0);

  FitResult f = fit(data);
  CHECK(f.beta(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.beta(1, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.rss(0) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(f.sigma2(0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(f.covariance(CovKind::homoskedastic, 0)(1, 1) == doctest::Approx(5.0).epsilon(1e-14));

  add_covariance(f, CovKind::hc0, data);
  CHECK(f.covariance(CovKind::hc0, 0)(1, 1) == doctest::Approx(2.5).epsilon(1e-14));
  add_covariance(f, CovKind::hc1, data);
  CHECK(f.covariance(CovKind::hc1, 0)(1, 1) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK_THROWS_AS(add_covariance(f, CovKind::clustered, data), Error);
}

TEST_CASE("sufficient statistics give the raw-row fit") {
  // The two-arm fixture as two groups: (ctl, n = 2, sum 4, sum_sq 10) and (trt, n = 2, sum 8, sum_sq 40).
  CsrMatrix design;
  design.n_rows = 2;
  design.n_cols = 2;
  design.row_ptr = {0, 1, 3};
  design.col_idx = {0, 0, 1};
  design.values = {1, 1, 1};
  WeightedData grouped;
  grouped.design = design;
  grouped.weight = {2, 2};
  grouped.m = 1;
  grouped.sum_y = {4, 8};
  grouped.sum_y_sq = {10, 40};
  const FitResult a = fit(grouped);

  const EncodedTable t = two_arm();
  const FitResult b = fit_table(t, plain());
  CHECK(a.beta == b.beta);
  CHECK(a.sigma2(0) == doctest::Approx(b.sigma2(0)).epsilon(1e-14));
  CHECK(a.n_obs == 4.0);
  CHECK(a.df_resid == 2.0);
}

TEST_CASE("zero-weight rows change nothing") {
  const EncodedTable t = two_arm();
  const ColumnLayout l = build_layout(plain(), t);
  const SparseDesignMatrix m = build_design(t, l);
  const Eigen::MatrixXd y = kpi_matrix(t);
  const std::vector<double> unit(4, 1.0);
  const GramSystem base = accumulate_gram(m, y, unit);

  // Append a fifth row (treated, y = 1000) with weight zero.
  const EncodedTable t5 = EncodedTable::from_columns(
      {cat("treatment", ColumnKind::treatment, {"ctl", "ctl", "trt", "trt", "trt"}),
       num("y", ColumnKind::kpi, {1, 3, 2, 6, 1000})});
  const std::vector<double> w5{1, 1, 1, 1, 0};
  const GramSystem extra = accumulate_gram(build_design(t5, l), kpi_matrix(t5), w5);
  CHECK(extra.xtwx == base.xtwx);
  CHECK(extra.xtwy == base.xtwy);
  CHECK(extra.n_effective == 4);
  CHECK(fit(extra).beta == fit(base).beta);

  const std::vector<double> negative{1, 1, 1, -1};
  CHECK_THROWS_AS(accumulate_gram(m, y, negative), Error);
}

TEST_CASE("collinear columns are reported by name") {
  const EncodedTable t = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"a", "b", "a", "b", "a"}),
                                                     num("x", ColumnKind::numeric, {1, 2, 3, 4, 5}),
                                                     num("x2", ColumnKind::numeric, {2, 4, 6, 8, 10}),
                                                     num("y", ColumnKind::kpi, {1, 2, 3, 4, 6})});
  try {
    fit_table(t, plain({"x", "x2"}));
    FAIL("expected RankDeficient");
  } catch (const RankDeficientError& e) {
    CHECK(e.code() == "RankDeficient");
    CHECK(e.exit_code() == 3);
    const auto& names = e.names();
    CHECK(std::find(names.begin(), names.end(), "x") != names.end());
    CHECK(std::find(names.begin(), names.end(), "x2") != names.end());
  }
}

TEST_CASE("ridge resolves collinearity") {
  const EncodedTable t = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"a", "b", "a", "b"}),
                                                     num("x", ColumnKind::numeric, {1, 2, 3, 4}),
                                                     num("x2", ColumnKind::numeric, {2, 4, 6, 8}),
                                                     num("y", ColumnKind::kpi, {1, 2, 3, 5})});
  const ColumnLayout l = build_layout(plain({"x", "x2"}), t);
  FitOptions o;
  o.ridge = 1e-3;
  const FitResult f = fit(raw_data(build_design_csr(t, l), t), o);
  CHECK(f.ridge == 1e-3);
  CHECK(f.beta.allFinite());
}

TEST_CASE("saturated two-by-two fit") {
  const FitResult f = fit_table(saturated(), saturated_spec());
  const Eigen::Vector4d expected(0, 1, 0, 2);
  CHECK((f.beta.col(0) - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(f.rss(0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("one cluster per row reproduces HC1") {
  std::mt19937_64 rng(3);
  RandomShape shape;
  shape.n = 200;
  const RandomInstance inst = random_instance(rng, shape);
  const ColumnLayout l = build_layout(inst.spec, inst.table);
  WeightedData data = raw_data(build_design_csr(inst.table, l), inst.table);
  data.cluster.resize(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) data.cluster[i] = static_cast<std::uint32_t>(i);
  data.n_clusters = data.rows();
  FitResult f = fit(data);
  add_covariance(f, CovKind::hc1, data);
  add_covariance(f, CovKind::clustered, data);
  for (std::size_t j = 0; j < f.m(); ++j) {
    CHECK(max_rel(f.covariance(CovKind::clustered, j), f.covariance(CovKind::hc1, j)) < 1e-12);
  }
}

TEST_CASE("multi-KPI fit equals per-KPI fits") {
  std::mt19937_64 rng(4);
  RandomShape shape;
  shape.n_kpis = 3;
  const RandomInstance inst = random_instance(rng, shape);
  const ColumnLayout l = build_layout(inst.spec, inst.table);
  const SparseDesignMatrix m = build_design(inst.table, l);
  const Eigen::MatrixXd y = kpi_matrix(inst.table);
  const std::vector<double> w(inst.table.n_rows(), 1.0);
  const FitResult all = fit(accumulate_gram(m, y, w));
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const FitResult one = fit(accumulate_gram(m, y.col(j), w));
    CHECK(max_rel(one.beta, all.beta.col(j)) < 1e-13);
    CHECK(one.sigma2(0) == doctest::Approx(all.sigma2(j)).epsilon(1e-12));
  }
}

TEST_CASE("agreement with a dense QR reference") {
  std::mt19937_64 rng(7);
  RandomShape shape;
  shape.clusters = true;
  shape.time = true;
  for (int rep = 0; rep < 10; ++rep) {
    const RandomInstance inst = random_instance(rng, shape);
    const ColumnLayout l = build_layout(inst.spec, inst.table);
    const WeightedData data = raw_data(build_design_csr(inst.table, l), inst.table);
    FitResult f = fit(data);
    add_covariance(f, CovKind::hc0, data);
    add_covariance(f, CovKind::clustered, data);

    const Eigen::MatrixXd x = dense_design(inst.table, l);
    const DenseOls ref = dense_ols(x, kpi_matrix(inst.table), inst.table.cluster_column()->codes);
    CHECK(max_rel(f.beta, ref.beta) < 1e-9);
    const double n = static_cast<double>(x.rows()), p = static_cast<double>(x.cols());
    const double g = static_cast<double>(data.n_clusters);
    for (std::size_t j = 0; j < f.m(); ++j) {
      CHECK(max_rel(f.covariance(CovKind::homoskedastic, j), ref.homoskedastic[j]) < 1e-9);
      CHECK(max_rel(f.covariance(CovKind::hc0, j), ref.hc0[j]) < 1e-9);
      const Eigen::MatrixXd cl =
          (g / (g - 1.0)) * ((n - 1.0) / (n - p)) * ref.bread * ref.clustered_meat[j] * ref.bread;
      CHECK(max_rel(f.covariance(CovKind::clustered, j), cl) < 1e-9);
    }
  }
}

TEST_CASE("Gram accumulation is identical across thread counts") {
  std::mt19937_64 rng(9);
  RandomShape shape;
  shape.n = 20000;
  const RandomInstance inst = random_instance(rng, shape);
  const ColumnLayout l = build_layout(inst.spec, inst.table);
  const WeightedData data = raw_data(build_design_csr(inst.table, l), inst.table);
  const unsigned saved = parallel::threads();
  parallel::set_threads(1);
  const GramSystem a = accumulate_gram(data);
  parallel::set_threads(8);
  const GramSystem b = accumulate_gram(data);
  parallel::set_threads(saved);
  CHECK(a.xtwx == b.xtwx);
  CHECK(a.xtwy == b.xtwy);
  CHECK(a.ytwy == b.ytwy);
}

TEST_CASE("duplicated rows equal doubled weights") {
  const EncodedTable t = two_arm();
  const ColumnLayout l = build_layout(plain(), t);
  const std::vector<double> w{2, 1, 3, 1};
  const FitResult weighted = fit(accumulate_gram(build_design(t, l), kpi_matrix(t), w));
  const EncodedTable dup = EncodedTable::from_columns(
      {cat("treatment", ColumnKind::treatment, {"ctl", "ctl", "ctl", "trt", "trt", "trt", "trt"}),
       num("y", ColumnKind::kpi, {1, 1, 3, 2, 2, 2, 6})});
  const FitResult expanded = fit_table(dup, plain());
  CHECK(max_rel(weighted.beta, expanded.beta) < 1e-14);
  CHECK(weighted.sigma2(0) == doctest::Approx(expanded.sigma2(0)).epsilon(1e-13));
}

TEST_CASE("covariance kinds parse") {
  CHECK(parse_cov_kind("hc1") == CovKind::hc1);
  CHECK(parse_cov_kind("clustered") == CovKind::clustered);
  CHECK_FALSE(parse_cov_kind("HC3").has_value());
  CHECK(to_string(CovKind::homoskedastic) == "homoskedastic");
}
