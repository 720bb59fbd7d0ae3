#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cfx/error.hpp"
#include "cfx/policy.hpp"
#include "cfx/stats.hpp"
#include "support.hpp"

using namespace cfx;
using namespace cfx::testing;

namespace {

EffectsMatrix matrix(std::size_t users, std::size_t actions, std::vector<double> delta) {
  EffectsMatrix m;
  m.n_users = users;
  m.n_actions = actions;
  m.delta = std::move(delta);
  m.available.assign(users * actions, 1);
  return m;
}

FitResult fit_table(const EncodedTable& t, const ColumnLayout& l) {
  return fit(raw_data(build_design_csr(t, l), t));
}

}  // namespace

TEST_CASE("greedy choice per row") {
  const EffectsMatrix a = matrix(1, 3, {0, 1, 3});
  CHECK(greedy_policy(a).action == std::vector<std::uint32_t>{2});
  const EffectsMatrix b = matrix(1, 3, {0, 0, 0});
  CHECK(greedy_policy(b).action == std::vector<std::uint32_t>{0});
  EffectsMatrix c = matrix(1, 3, {0, 5, -2});
  c.available[1] = 0;
  CHECK(greedy_policy(c).action == std::vector<std::uint32_t>{0});
  EffectsMatrix none = matrix(1, 2, {0, 1});
  none.available = {0, 0};
  CHECK_THROWS_AS(greedy_policy(none), Error);
}

TEST_CASE("greedy matches exhaustive search on small instances") {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t users = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    const std::size_t actions = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
    EffectsMatrix m = matrix(users, actions, std::vector<double>(users * actions, 0.0));
    for (std::size_t j = 0; j < users; ++j) {
      for (std::size_t k = 1; k < actions; ++k) {
        m.delta[j * actions + k] = std::round(nd(rng) * 2.0) / 2.0;
        if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) {
          m.available[j * actions + k] = 0;
          m.delta[j * actions + k] = std::nan("");
        }
      }
    }
    const PolicyAssignment g = greedy_policy(m);
    double total = 0.0;
    for (std::size_t j = 0; j < users; ++j) {
      CHECK(m.is_available(j, g.action[j]));
      total += m(j, g.action[j]);
    }
    CHECK(total == exhaustive_best(m));
  }
}

TEST_CASE("saturated individual effects and summed contrast") {
  const EncodedTable t = saturated();
  const ColumnLayout l = build_layout(saturated_spec(), t);
  FitResult f = fit_table(t, l);
  const EffectsMatrix fx = individual_effects(f, l, t, EligibilityMask::all(4, 2));
  CHECK(fx(0, 0) == 0.0);
  CHECK(fx(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fx(2, 1) == doctest::Approx(3.0).epsilon(1e-12));

  // One user per covariate level.
  const EncodedTable users = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"ctl", "trt"}),
                                                         cat("x", ColumnKind::categorical, {"a", "b"}),
                                                         num("y", ColumnKind::kpi, {0, 0})});
  const PolicyEvalResult r = evaluate_policy(f, CovKind::homoskedastic, l, users, constant_policy(2, 1, "treat"),
                                             constant_policy(2, 0, "control"));
  CHECK(r.statistic == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(r.n_users == 2);

  const PolicyEvalResult same =
      evaluate_policy(f, CovKind::homoskedastic, l, users, constant_policy(2, 0), constant_policy(2, 0));
  CHECK(same.statistic == 0.0);
  CHECK(same.p_value == 0.5);
}

TEST_CASE("greedy treats only users who gain") {
  const EncodedTable t = EncodedTable::from_columns(
      {cat("treatment", ColumnKind::treatment, {"ctl", "trt", "ctl", "trt", "ctl", "trt", "ctl", "trt"}),
       cat("x", ColumnKind::categorical, {"a", "a", "b", "b", "a", "a", "b", "b"}),
       num("y", ColumnKind::kpi, {0, 1, 0, -1, 2, 3, 2, 1})});
  const ColumnLayout l = build_layout(saturated_spec(), t);
  const FitResult f = fit_table(t, l);
  const EncodedTable users = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"ctl", "trt"}),
                                                         cat("x", ColumnKind::categorical, {"a", "b"}),
                                                         num("y", ColumnKind::kpi, {0, 0})});
  const PolicyAssignment g = greedy_policy(individual_effects(f, l, users, EligibilityMask::all(2, 2)));
  CHECK(g.action == std::vector<std::uint32_t>{1, 0});
  const PolicyEvalResult r =
      evaluate_policy(f, CovKind::homoskedastic, l, users, g, constant_policy(2, 0, "control"));
  CHECK(r.statistic == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(1.0 - stats::normal_cdf(r.z)).epsilon(1e-12));
}

TEST_CASE("masked actions are unavailable") {
  const EncodedTable t = saturated();
  const ColumnLayout l = build_layout(saturated_spec(), t);
  const FitResult f = fit_table(t, l);
  EligibilityMask mask = EligibilityMask::all(4, 2);
  mask.set(2, 1, false);
  mask.set(3, 0, false);  // control cannot be removed
  const EffectsMatrix fx = individual_effects(f, l, t, mask);
  CHECK_FALSE(fx.is_available(2, 1));
  CHECK(std::isnan(fx(2, 1)));
  CHECK(fx.is_available(3, 0));
  CHECK(greedy_policy(fx).action == std::vector<std::uint32_t>{1, 1, 0, 1});
}

TEST_CASE("eligibility column") {
  const EncodedTable t = EncodedTable::from_columns(
      {cat("treatment", ColumnKind::treatment, {"c", "t1", "t2", "c"}),
       cat("elig", ColumnKind::eligibility, {"*", "t1", "t1|t2", "c"}), num("y", ColumnKind::kpi, {1, 2, 3, 4})});
  DesignSpec s;
  s.treatment = "treatment";
  const ColumnLayout l = build_layout(s, t);
  const EligibilityMask m = eligibility_from_table(t, l);
  CHECK(m(0, 2));
  CHECK(m(1, 1));
  CHECK_FALSE(m(1, 2));
  CHECK(m(2, 2));
  CHECK(m(3, 0));
  CHECK_FALSE(m(3, 1));
  const EncodedTable bad = EncodedTable::from_columns(
      {cat("treatment", ColumnKind::treatment, {"c", "t1"}), cat("elig", ColumnKind::eligibility, {"*", "zz"}),
       num("y", ColumnKind::kpi, {1, 2})});
  CHECK_THROWS_AS(eligibility_from_table(bad, build_layout(s, bad)), Error);
}

TEST_CASE("constant effects give a constant policy") {
  std::mt19937_64 rng(61);
  RandomShape shape;
  const RandomInstance inst = random_instance(rng, shape);
  DesignSpec s = inst.spec;
  s.interact_treatment_covariates = false;
  const ColumnLayout l = build_layout(s, inst.table);
  const FitResult f = fit_table(inst.table, l);
  const EffectsMatrix fx =
      individual_effects(f, l, inst.table, EligibilityMask::all(inst.table.n_rows(), l.n_treatment_levels()));
  const PolicyAssignment g = greedy_policy(fx);
  for (std::size_t j = 1; j < g.action.size(); ++j) CHECK(g.action[j] == g.action[0]);
}

TEST_CASE("anti-symmetry and intercept invariance") {
  std::mt19937_64 rng(62);
  RandomShape shape;
  shape.n_kpis = 1;
  const RandomInstance inst = random_instance(rng, shape);
  const ColumnLayout l = build_layout(inst.spec, inst.table);
  FitResult f = fit_table(inst.table, l);
  const std::size_t n = inst.table.n_rows();
  const PolicyAssignment g = greedy_policy(individual_effects(f, l, inst.table, EligibilityMask::all(n, l.n_treatment_levels())));
  const PolicyAssignment c = constant_policy(n, 0, "control");
  const PolicyEvalResult fwd = evaluate_policy(f, CovKind::homoskedastic, l, inst.table, g, c);
  const PolicyEvalResult rev = evaluate_policy(f, CovKind::homoskedastic, l, inst.table, c, g);
  CHECK(rev.statistic == doctest::Approx(-fwd.statistic).epsilon(1e-12));
  CHECK(rev.se == fwd.se);
  CHECK(fwd.p_value + rev.p_value == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<Column> cols = inst.table.columns();
  for (auto& col : cols) {
    if (col.kind == ColumnKind::kpi) {
      for (auto& v : col.values) v += 1000.0;
    }
  }
  const EncodedTable shifted = EncodedTable::from_columns(cols);
  const FitResult fs = fit_table(shifted, l);
  const EffectsMatrix a = individual_effects(f, l, inst.table, EligibilityMask::all(n, l.n_treatment_levels()));
  const EffectsMatrix b = individual_effects(fs, l, shifted, EligibilityMask::all(n, l.n_treatment_levels()));
  for (std::size_t i = 0; i < a.delta.size(); ++i) CHECK(std::abs(a.delta[i] - b.delta[i]) < 1e-8);
  const PolicyEvalResult fs_eval = evaluate_policy(fs, CovKind::homoskedastic, l, shifted, g, c);
  CHECK(fs_eval.statistic == doctest::Approx(fwd.statistic).epsilon(1e-9));
}

TEST_CASE("one-sided p-values") {
  CHECK(one_sided_p(0.0, 0.0) == 0.5);
  CHECK(one_sided_p(1.0, 0.0) == 0.0);
  CHECK(one_sided_p(-1.0, 0.0) == 1.0);
  CHECK(one_sided_p(0.0, 2.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(one_sided_p(1.959964, 1.0) == doctest::Approx(0.025).epsilon(1e-6));
}

TEST_CASE("resampled policy standard error") {
  std::mt19937_64 rng(63);
  RandomShape shape;
  shape.n = 4000;
  shape.n_kpis = 1;
  shape.max_categorical = 1;
  shape.max_numeric = 1;
  const RandomInstance inst = random_instance(rng, shape);
  const ColumnLayout l = build_layout(inst.spec, inst.table);
  const WeightedData data = raw_data(build_design_csr(inst.table, l), inst.table);
  FitResult f = fit(data);
  add_covariance(f, CovKind::hc1, data);
  const std::size_t n = inst.table.n_rows();
  const PolicyAssignment g = greedy_policy(individual_effects(f, l, inst.table, EligibilityMask::all(n, l.n_treatment_levels())));
  const PolicyAssignment c = constant_policy(n, 0, "control");
  const PolicyEvalResult delta = evaluate_policy(f, CovKind::hc1, l, inst.table, g, c);
  BlbConfig cfg;
  cfg.seed = 2;
  cfg.resamples = 50;
  const PolicyEvalResult blb = evaluate_policy_blb(data, l, inst.table, g, c, cfg);
  CHECK(blb.method == PolicyMethod::blb);
  CHECK(blb.statistic == doctest::Approx(delta.statistic).epsilon(1e-9));
  CHECK(blb.se > 0.5 * delta.se);
  CHECK(blb.se < 2.0 * delta.se);
}

TEST_CASE("assignment dump") {
  const EncodedTable t = two_arm();
  DesignSpec s;
  s.treatment = "treatment";
  const ColumnLayout l = build_layout(s, t);
  std::ostringstream out;
  write_assignment_csv(out, t, l, constant_policy(4, 1));
  CHECK(out.str() == "unit_id,action\n0,trt\n1,trt\n2,trt\n3,trt\n");
}
