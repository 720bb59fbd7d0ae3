#include <doctest.h>

#include <functional>

#include "cfx/design.hpp"
#include "cfx/error.hpp"
#include "support.hpp"

using namespace cfx;
using namespace cfx::testing;

namespace {

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

DesignSpec spec(std::vector<std::string> covariates, bool interact) {
  DesignSpec s;
  s.treatment = "treatment";
  s.covariates = std::move(covariates);
  s.interact_treatment_covariates = interact;
  return s;
}

}  // namespace

TEST_CASE("layout column counts") {
  SUBCASE("two arms, no covariates") {
    const ColumnLayout l = build_layout(spec({}, false), two_arm());
    CHECK(l.p() == 2);
    CHECK(l.names() == std::vector<std::string>{"(intercept)", "treatment[trt]"});
  }
  SUBCASE("three arms, numeric covariate, interactions") {
    const EncodedTable t = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"a", "b", "c"}),
                                                       num("x", ColumnKind::numeric, {1, 2, 3}),
                                                       num("y", ColumnKind::kpi, {0, 0, 0})});
    const ColumnLayout l = build_layout(spec({"x"}, true), t);
    CHECK(l.p() == 6);
    CHECK(l.names() == std::vector<std::string>{"(intercept)", "treatment[b]", "treatment[c]", "x",
                                                "treatment[b]:x", "treatment[c]:x"});
  }
  SUBCASE("two arms, four-level categorical, interactions") {
    const EncodedTable t = EncodedTable::from_columns(
        {cat("treatment", ColumnKind::treatment, {"a", "b", "a", "b"}),
         cat("g", ColumnKind::categorical, {"p", "q", "r", "s"}), num("y", ColumnKind::kpi, {0, 0, 0, 0})});
    const ColumnLayout l = build_layout(spec({"g"}, true), t);
    CHECK(l.p() == 8);
  }
}

TEST_CASE("layout errors") {
  CHECK(error_code([] { build_layout(spec({"nope"}, false), two_arm()); }) == "UnknownColumn");
  CHECK(error_code([] {
          DesignSpec s = spec({}, false);
          s.treatment = "y";
          build_layout(s, two_arm());
        }) == "TreatmentNotCategorical");
  CHECK(error_code([] {
          const EncodedTable t = EncodedTable::from_columns(
              {cat("treatment", ColumnKind::treatment, {"a", "a"}), num("y", ColumnKind::kpi, {1, 2})});
          build_layout(spec({}, false), t);
        }) == "FewerThanTwoTreatmentLevels");
  CHECK(error_code([] {
          DesignSpec s = spec({}, false);
          s.interact_treatment_time = true;
          build_layout(s, two_arm());
        }) == "InvalidDesign");
}

TEST_CASE("design matrix storage") {
  SUBCASE("two-arm design stores six ones") {
    const EncodedTable t = two_arm();
    const SparseDesignMatrix m = build_design(t, build_layout(spec({}, false), t));
    CHECK(m.nnz() == 6);
    CHECK(m.to_dense() == (Eigen::MatrixXd(4, 2) << 1, 0, 1, 0, 1, 1, 1, 1).finished());
  }
  SUBCASE("all-control rows leave the dummy column empty") {
    const EncodedTable t = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"a", "a", "b"}),
                                                       num("y", ColumnKind::kpi, {1, 2, 3})});
    const ColumnLayout l = build_layout(spec({}, false), t);
    const std::vector<std::size_t> rows{0, 1};
    const EncodedTable ctl = t.select_rows(rows);
    const SparseDesignMatrix m = build_design(ctl, l);
    CHECK(m.col_ptr[2] - m.col_ptr[1] == 0);
  }
  SUBCASE("zero numeric values are not stored") {
    const EncodedTable t = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"a", "b"}),
                                                       num("x", ColumnKind::numeric, {0.0, 2.0}),
                                                       num("y", ColumnKind::kpi, {1, 2})});
    const ColumnLayout l = build_layout(spec({"x"}, true), t);
    const SparseDesignMatrix m = build_design(t, l);
    for (double v : m.values) CHECK(v != 0.0);
    CHECK(m.nnz() == 2 + 1 + 1 + 1);
  }
}

TEST_CASE("CSC row indices increase within columns") {
  std::mt19937_64 rng(5);
  const RandomInstance inst = random_instance(rng, {});
  const ColumnLayout l = build_layout(inst.spec, inst.table);
  const SparseDesignMatrix m = build_design(inst.table, l);
  CHECK(m.n_cols == l.p());
  for (std::size_t j = 0; j < m.n_cols; ++j) {
    for (std::size_t k = m.col_ptr[j] + 1; k < m.col_ptr[j + 1]; ++k) CHECK(m.row_idx[k - 1] < m.row_idx[k]);
  }
  const CsrMatrix r = to_csr(m);
  CHECK(r.to_dense() == m.to_dense());
}

TEST_CASE("contrast vectors") {
  SUBCASE("pure main effect") {
    const EncodedTable t = two_arm();
    const ColumnLayout l = build_layout(spec({}, false), t);
    const ContrastVector c = effect_contrast(l, build_design(t, l), t, 1, Segment{});
    CHECK(c.c == Eigen::Vector2d(0, 1));
    CHECK(c.n_segment == 4);
  }
  SUBCASE("numeric covariate mean enters the interaction") {
    const EncodedTable t = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"a", "b", "a", "b"}),
                                                       num("x", ColumnKind::numeric, {1, 2, 3, 4}),
                                                       num("y", ColumnKind::kpi, {0, 0, 0, 0})});
    const ColumnLayout l = build_layout(spec({"x"}, true), t);
    const ContrastVector c = effect_contrast(l, build_design(t, l), t, 1, Segment{});
    CHECK(c.c == Eigen::Vector4d(0, 1, 0, 2.5));
  }
  SUBCASE("saturated fixture, segment x=b") {
    const EncodedTable t = saturated();
    const ColumnLayout l = build_layout(saturated_spec(), t);
    const ContrastVector c = effect_contrast(l, build_design(t, l), t, 1, Segment{{{"x", "b"}}});
    CHECK(c.c == Eigen::Vector4d(0, 1, 0, 1));
    CHECK(c.n_segment == 2);
    CHECK(c.segment == "x=b");
  }
  SUBCASE("errors") {
    const EncodedTable t = saturated();
    const ColumnLayout l = build_layout(saturated_spec(), t);
    const SparseDesignMatrix m = build_design(t, l);
    CHECK(error_code([&] { effect_contrast(l, m, t, 0, Segment{}); }) == "ReferenceLevelRequested");
    CHECK(error_code([&] { effect_contrast(l, m, t, 1, Segment{{{"x", "zz"}}}); }) == "UnknownLevel");
    CHECK(error_code([&] { effect_contrast(l, m, t, 1, Segment{{{"treatment", "ctl"}}}); }) == "SegmentNotCovariate");
    const std::vector<std::size_t> rows{0, 1};
    const EncodedTable a_only = t.select_rows(rows);
    CHECK(error_code([&] { effect_contrast(l, build_design(a_only, l), a_only, 1, Segment{{{"x", "b"}}}); }) ==
          "EmptySegment");
  }
}

TEST_CASE("contrast support and partition consistency") {
  std::mt19937_64 rng(11);
  RandomShape shape;
  shape.max_categorical = 2;
  for (int rep = 0; rep < 10; ++rep) {
    const RandomInstance inst = random_instance(rng, shape);
    const ColumnLayout l = build_layout(inst.spec, inst.table);
    const SparseDesignMatrix m = build_design(inst.table, l);
    const ContrastVector pop = effect_contrast(l, m, inst.table, 1, Segment{});
    for (std::size_t j = 0; j < l.p(); ++j) {
      const TermRole r = l.column(j).role;
      const bool owned = (r == TermRole::treatment || r == TermRole::treatment_covariate ||
                          r == TermRole::treatment_period) && l.column(j).treatment_level == 1;
      if (!owned) CHECK(pop.c(static_cast<Eigen::Index>(j)) == 0.0);
    }
    const Column* seg = nullptr;
    for (const auto& name : inst.spec.covariates) {
      if (inst.table.column(name).categorical()) seg = &inst.table.column(name);
    }
    if (seg == nullptr) continue;
    Eigen::VectorXd combined = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.p()));
    for (const auto& level : seg->levels) {
      const ContrastVector c = effect_contrast(l, m, inst.table, 1, Segment{{{seg->name, level}}});
      combined += c.c * (static_cast<double>(c.n_segment) / static_cast<double>(inst.table.n_rows()));
    }
    CHECK((combined - pop.c).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("layout is a pure function of spec and dictionaries") {
  const EncodedTable t = saturated();
  const ColumnLayout a = build_layout(saturated_spec(), t);
  const ColumnLayout b = build_layout(saturated_spec(), t);
  CHECK(a.names() == b.names());
  CHECK_NOTHROW(a.check_compatible(t));
}

TEST_CASE("segment descriptors round trip") {
  const Segment s{{{"country", "US"}, {"device", "ios"}}};
  CHECK(s.descriptor() == "country=US&device=ios");
  CHECK(Segment::parse(s.descriptor()).predicates == s.predicates);
  CHECK(Segment::parse("all").predicates.empty());
  CHECK_THROWS_AS(Segment::parse("country"), Error);
}

TEST_CASE("time periods add dummies and treatment-period interactions") {
  const EncodedTable t = EncodedTable::from_columns({cat("treatment", ColumnKind::treatment, {"a", "b", "a", "b"}),
                                                     cat("t", ColumnKind::time_period, {"1", "1", "2", "2"}),
                                                     num("y", ColumnKind::kpi, {0, 1, 0, 2})});
  DesignSpec s = spec({}, false);
  s.time = "t";
  s.interact_treatment_time = true;
  const ColumnLayout l = build_layout(s, t);
  CHECK(l.names() == std::vector<std::string>{"(intercept)", "treatment[b]", "t[2]", "treatment[b]:t[2]"});
  const ContrastVector c2 = effect_contrast(l, build_design(t, l), t, 1, Segment{}, 1u);
  CHECK(c2.c == Eigen::Vector4d(0, 1, 0, 1));
  CHECK(c2.period == std::optional<std::string>("2"));
}
