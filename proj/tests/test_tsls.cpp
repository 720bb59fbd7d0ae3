#include <doctest.h>

#include <cmath>

#include "cfx/error.hpp"
#include "cfx/tsls.hpp"
#include "support.hpp"

using namespace cfx;
using namespace cfx::testing;

namespace {

TslsSpec za_spec() {
  TslsSpec s;
  s.treatment = "a";
  s.instruments = {"z"};
  return s;
}

// Textbook two-stage least squares on dense matrices, built here from the
// design rows only.
Eigen::MatrixXd textbook_2sls(const EncodedTable& t, const TslsSpec& spec) {
  DesignSpec d;
  d.treatment = spec.treatment;
  d.covariates = spec.covariates;
  d.instruments = spec.instruments;
  const ColumnLayout l = build_layout(d, t);
  const Eigen::MatrixXd full = dense_design(t, l);
  std::vector<Eigen::Index> a_cols, w_cols, m_cols;
  for (std::size_t j = 0; j < l.p(); ++j) {
    const auto idx = static_cast<Eigen::Index>(j);
    switch (l.column(j).role) {
      case TermRole::treatment: a_cols.push_back(idx); break;
      case TermRole::instrument: w_cols.push_back(idx); break;
      default: w_cols.push_back(idx); m_cols.push_back(idx); break;
    }
  }
  const Eigen::MatrixXd w = full(Eigen::all, w_cols);
  const Eigen::MatrixXd a = full(Eigen::all, a_cols);
  const Eigen::MatrixXd a_hat = w * w.colPivHouseholderQr().solve(a);
  Eigen::MatrixXd m(full.rows(), 1 + static_cast<Eigen::Index>(a_cols.size()) + static_cast<Eigen::Index>(m_cols.size()) - 1);
  m.col(0) = full.col(0);
  m.middleCols(1, a_hat.cols()) = a_hat;
  for (std::size_t j = 1; j < m_cols.size(); ++j) m.col(a_hat.cols() + static_cast<Eigen::Index>(j)) = full.col(m_cols[j]);
  return m.colPivHouseholderQr().solve(kpi_matrix(t));
}

}  // namespace

TEST_CASE("Wald ratio in the just-identified binary case") {
  const TslsFit f = fit_2sls(wald_table(), za_spec());
  CHECK(f.beta(1, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(f.layout.names()[1] == "a[1]");
  const TslsFit o = dense_2sls_oracle(wald_table(), za_spec());
  CHECK(o.beta(1, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(textbook_2sls(wald_table(), za_spec())(1, 0) == doctest::Approx(4.0).epsilon(1e-12));
  REQUIRE(f.first_stage_f.size() == 1);
  CHECK(std::isfinite(f.first_stage_f[0]));
  CHECK(f.first_stage_f[0] >= 0.0);
  CHECK_FALSE(f.warnings.empty());  // four rows cannot give F >= 10
}

TEST_CASE("perfect instrument reproduces OLS") {
  const EncodedTable t = EncodedTable::from_columns({cat("z", ColumnKind::instrument, {"0", "0", "1", "1", "1"}),
                                                     cat("a", ColumnKind::treatment, {"0", "0", "1", "1", "1"}),
                                                     num("y", ColumnKind::kpi, {1, 2, 4, 6, 5})});
  const TslsFit f = fit_2sls(t, za_spec());
  DesignSpec d;
  d.treatment = "a";
  const ColumnLayout l = build_layout(d, t);
  const FitResult ols = fit(raw_data(build_design_csr(t, l), t));
  CHECK(max_rel(f.beta, ols.beta) < 1e-12);
  CHECK(f.sigma2(0) == doctest::Approx(ols.sigma2(0)).epsilon(1e-12));
}

TEST_CASE("an instrument unrelated to the treatment is a rank failure") {
  const EncodedTable t = EncodedTable::from_columns({cat("z", ColumnKind::instrument, {"0", "0", "1", "1"}),
                                                     cat("a", ColumnKind::treatment, {"0", "1", "0", "1"}),
                                                     num("y", ColumnKind::kpi, {0, 1, 2, 3})});
  try {
    fit_2sls(t, za_spec());
    FAIL("expected RankDeficient");
  } catch (const Error& e) {
    CHECK(e.code() == "RankDeficient");
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("missing instruments are a design error") {
  TslsSpec s = za_spec();
  s.instruments.clear();
  CHECK_THROWS_AS(fit_2sls(wald_table(), s), Error);
}

TEST_CASE("Gram composition matches dense two-stage references") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    const IvInstance inst = random_iv_instance(rng, 400);
    const TslsFit f = fit_2sls(inst.table, inst.spec);
    const TslsFit o = dense_2sls_oracle(inst.table, inst.spec);
    CHECK(max_rel(f.beta, o.beta) <= 1e-9);
    CHECK(max_rel(f.beta, textbook_2sls(inst.table, inst.spec)) <= 1e-9);
    for (std::size_t j = 0; j < f.cov_beta.size(); ++j) CHECK(max_rel(f.cov_beta[j], o.cov_beta[j]) <= 1e-9);
    CHECK(max_rel(f.sigma2, o.sigma2) <= 1e-9);
    REQUIRE(f.first_stage_f.size() == o.first_stage_f.size());
    for (std::size_t k = 0; k < f.first_stage_f.size(); ++k) {
      CHECK(std::isfinite(f.first_stage_f[k]));
      CHECK(f.first_stage_f[k] == doctest::Approx(o.first_stage_f[k]).epsilon(1e-8));
    }
  }
}

TEST_CASE("residual variance uses the observed treatment") {
  std::mt19937_64 rng(43);
  const IvInstance inst = random_iv_instance(rng, 300);
  const TslsFit f = fit_2sls(inst.table, inst.spec);
  const Eigen::MatrixXd m = dense_design(inst.table, f.layout);
  const Eigen::MatrixXd e = kpi_matrix(inst.table) - m * f.beta;
  for (Eigen::Index j = 0; j < e.cols(); ++j) {
    CHECK(f.rss(j) == doctest::Approx(e.col(j).squaredNorm()).epsilon(1e-9));
    CHECK(f.sigma2(j) == doctest::Approx(e.col(j).squaredNorm() / f.df_resid).epsilon(1e-9));
  }
  const FitResult view = f.as_fit_result();
  CHECK(view.covariance(CovKind::homoskedastic, 0) == f.cov_beta[0]);
}
