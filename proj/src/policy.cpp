#include "cfx/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "cfx/error.hpp"
#include "cfx/parallel.hpp"
#include "cfx/stats.hpp"
#include "gram_impl.hpp"

namespace cfx {
namespace {

bool treatment_role(TermRole r) {
  return r == TermRole::treatment || r == TermRole::treatment_covariate ||
         r == TermRole::treatment_period;
}

// Treatment-dependent part of the design row of `row` under `level`. The
// reference level has none, so this is m(x, level) - m(x, 0).
void treatment_part(const ColumnLayout& layout, const EncodedTable& table, std::size_t row,
                    std::uint32_t level, std::vector<Entry>& scratch, std::vector<Entry>& out) {
  out.clear();
  if (level == 0) return;
  scratch.clear();
  layout.emit_row(table, row, level, scratch);
  for (const auto& e : scratch) {
    if (treatment_role(layout.column(e.col).role)) out.push_back(e);
  }
}

void check_policy(const PolicyAssignment& p, std::size_t n, std::size_t n_actions) {
  if (p.action.size() != n) {
    throw config_error("DimensionMismatch", "policy must assign an action to every user",
                       {{"policy", p.name}, {"users", std::to_string(p.action.size())},
                        {"rows", std::to_string(n)}});
  }
  for (auto a : p.action) {
    if (a >= n_actions) {
      throw config_error("UnknownLevel", "policy action outside the treatment levels",
                         {{"policy", p.name}, {"action", std::to_string(a)}});
    }
  }
}

}  // namespace

EligibilityMask EligibilityMask::all(std::size_t n_users, std::size_t n_actions) {
  return {n_users, n_actions, std::vector<std::uint8_t>(n_users * n_actions, 1)};
}

EligibilityMask eligibility_from_table(const EncodedTable& table, const ColumnLayout& layout) {
  const std::size_t n = table.n_rows();
  const std::size_t k = layout.n_treatment_levels();
  EligibilityMask mask = EligibilityMask::all(n, k);
  const Column* col = table.eligibility_column();
  if (col == nullptr) return mask;

  const auto& levels = layout.treatment_levels();
  // Parse each distinct dictionary entry once.
  std::vector<std::vector<std::uint8_t>> parsed(col->levels.size(), std::vector<std::uint8_t>(k, 0));
  for (std::size_t d = 0; d < col->levels.size(); ++d) {
    const std::string& text = col->levels[d];
    auto& row = parsed[d];
    row[0] = 1;
    if (text == "*") {
      std::fill(row.begin(), row.end(), 1);
      continue;
    }
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('|', start);
      if (end == std::string::npos) end = text.size();
      const std::string name = text.substr(start, end - start);
      if (!name.empty()) {
        const auto it = std::find(levels.begin(), levels.end(), name);
        if (it == levels.end()) {
          throw data_error("UnknownLevel", "eligibility lists an unknown treatment level",
                           {{"column", col->name}, {"level", name}});
        }
        row[static_cast<std::size_t>(it - levels.begin())] = 1;
      }
      start = end + 1;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    const auto& row = parsed[col->codes[j]];
    std::copy(row.begin(), row.end(), mask.allowed.begin() + static_cast<std::ptrdiff_t>(j * k));
  }
  return mask;
}

EffectsMatrix individual_effects(const FitResult& fit, const ColumnLayout& layout,
                                 const EncodedTable& table, const EligibilityMask& mask,
                                 std::size_t kpi) {
  const std::size_t n = table.n_rows();
  const std::size_t k = layout.n_treatment_levels();
  if (mask.n_users != n || mask.n_actions != k) {
    throw config_error("DimensionMismatch", "eligibility mask does not match the table");
  }
  EffectsMatrix out{n, k, std::vector<double>(n * k, 0.0), mask.allowed};
  const auto beta = fit.beta.col(static_cast<Eigen::Index>(kpi));
  const auto ranges = parallel::chunks(n);
  parallel::for_each(ranges.size(), [&](std::size_t c) {
    std::vector<Entry> scratch, part;
    for (std::size_t j = ranges[c].begin; j < ranges[c].end; ++j) {
      for (std::uint32_t a = 1; a < k; ++a) {
        double& d = out.delta[j * k + a];
        if (!mask(j, a)) {
          d = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        treatment_part(layout, table, j, a, scratch, part);
        for (const auto& e : part) d += e.value * beta(e.col);
      }
    }
  });
  return out;
}

PolicyAssignment greedy_policy(const EffectsMatrix& effects) {
  PolicyAssignment p{"greedy", std::vector<std::uint32_t>(effects.n_users, 0)};
  for (std::size_t j = 0; j < effects.n_users; ++j) {
    if (!effects.is_available(j, 0)) {
      throw config_error("NoEligibleAction", "control must be eligible for every user",
                         {{"user", std::to_string(j)}});
    }
    double best = effects(j, 0);
    for (std::uint32_t a = 1; a < effects.n_actions; ++a) {
      if (effects.is_available(j, a) && effects(j, a) > best) {
        best = effects(j, a);
        p.action[j] = a;
      }
    }
  }
  return p;
}

PolicyAssignment constant_policy(std::size_t n_users, std::uint32_t action, std::string name) {
  return {std::move(name), std::vector<std::uint32_t>(n_users, action)};
}

std::string_view to_string(PolicyMethod method) {
  return method == PolicyMethod::delta ? "delta" : "blb";
}

Eigen::VectorXd policy_contrast(const ColumnLayout& layout, const EncodedTable& table,
                                const PolicyAssignment& policy,
                                const PolicyAssignment& baseline) {
  const std::size_t n = table.n_rows();
  const std::size_t p = layout.p();
  check_policy(policy, n, layout.n_treatment_levels());
  check_policy(baseline, n, layout.n_treatment_levels());
  const auto ranges = parallel::chunks(n);
  std::vector<detail::KahanBuffer> parts;
  parts.reserve(ranges.size());
  for (std::size_t c = 0; c < ranges.size(); ++c) parts.emplace_back(p);
  parallel::for_each(ranges.size(), [&](std::size_t c) {
    std::vector<Entry> scratch, part;
    for (std::size_t j = ranges[c].begin; j < ranges[c].end; ++j) {
      if (policy.action[j] == baseline.action[j]) continue;
      treatment_part(layout, table, j, policy.action[j], scratch, part);
      for (const auto& e : part) parts[c].add(e.col, e.value);
      treatment_part(layout, table, j, baseline.action[j], scratch, part);
      for (const auto& e : part) parts[c].add(e.col, -e.value);
    }
  });
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  if (parts.empty()) return c;
  const auto total = parallel::tree_reduce(std::move(parts), [](detail::KahanBuffer& a, detail::KahanBuffer& b) { a.merge(b); });
  for (std::size_t i = 0; i < p; ++i) c(static_cast<Eigen::Index>(i)) = total.value(i);
  return c;
}

double one_sided_p(double t, double se) {
  if (se > 0.0) return 1.0 - stats::normal_cdf(t / se);
  if (t > 0.0) return 0.0;
  if (t < 0.0) return 1.0;
  return 0.5;
}

PolicyEvalResult evaluate_policy(const FitResult& fit, CovKind cov_kind,
                                 const ColumnLayout& layout, const EncodedTable& table,
                                 const PolicyAssignment& policy,
                                 const PolicyAssignment& baseline, std::size_t kpi) {
  const Eigen::MatrixXd& v = fit.covariance(cov_kind, kpi);
  const Eigen::VectorXd c = policy_contrast(layout, table, policy, baseline);
  PolicyEvalResult r;
  r.statistic = c.dot(fit.beta.col(static_cast<Eigen::Index>(kpi)));
  r.se = std::sqrt(std::max(0.0, c.dot(v * c)));
  r.z = r.se > 0.0 ? r.statistic / r.se : std::numeric_limits<double>::quiet_NaN();
  r.p_value = one_sided_p(r.statistic, r.se);
  r.n_users = table.n_rows();
  r.method = PolicyMethod::delta;
  r.policy = policy.name;
  r.baseline = baseline.name;
  if (kpi < table.n_kpis()) r.kpi = table.kpi(kpi).name;
  return r;
}

PolicyEvalResult evaluate_policy_blb(const WeightedData& data, const ColumnLayout& layout,
                                     const EncodedTable& table,
                                     const PolicyAssignment& policy,
                                     const PolicyAssignment& baseline,
                                     const BlbConfig& config, std::size_t kpi) {
  const std::size_t n = table.n_rows();
  if (data.rows() != n || data.p() != layout.p()) {
    throw config_error("DimensionMismatch", "weighted data does not match the table");
  }
  check_policy(policy, n, layout.n_treatment_levels());
  check_policy(baseline, n, layout.n_treatment_levels());
  const std::size_t p = layout.p();

  // Per-user contrast rows, stored sparsely once.
  std::vector<std::size_t> ptr(n + 1, 0);
  std::vector<Entry> entries;
  {
    std::vector<Entry> scratch, a, b;
    std::vector<double> dense(p, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (policy.action[j] != baseline.action[j]) {
        treatment_part(layout, table, j, policy.action[j], scratch, a);
        treatment_part(layout, table, j, baseline.action[j], scratch, b);
        for (const auto& e : a) dense[e.col] += e.value;
        for (const auto& e : b) dense[e.col] -= e.value;
        for (const auto& e : a) {
          if (dense[e.col] != 0.0) entries.push_back({e.col, dense[e.col]});
          dense[e.col] = 0.0;
        }
        for (const auto& e : b) {
          if (dense[e.col] != 0.0) entries.push_back({e.col, dense[e.col]});
          dense[e.col] = 0.0;
        }
      }
      ptr[j + 1] = entries.size();
    }
  }

  const Statistic t_stat = [&](const WeightedView& view) {
    const double total_w = [&] {
      stats::CompensatedSum s;
      for (double w : view.weights) s.add(w);
      return s.value();
    }();
    // Sum over users scaled to the full population.
    const double scale = total_w > 0.0 ? static_cast<double>(n) / total_w : 0.0;
    detail::KahanBuffer c(p);
    for (std::size_t i = 0; i < view.rows.size(); ++i) {
      const std::size_t j = view.rows[i];
      for (std::size_t e = ptr[j]; e < ptr[j + 1]; ++e) c.add(entries[e].col, view.weights[i] * scale * entries[e].value);
    }
    Eigen::VectorXd cv(static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < p; ++i) cv(static_cast<Eigen::Index>(i)) = c.value(i);
    try {
      const FitResult f = fit(accumulate_gram(data, Resample{view.rows, view.weights}));
      return cv.dot(f.beta.col(static_cast<Eigen::Index>(kpi)));
    } catch (const RankDeficientError& e) {
      throw numeric_error("DegenerateSubset", e.what(), e.context());
    }
  };

  const DistributionEstimate d = blb_estimate(t_stat, n, config);
  PolicyEvalResult r;
  r.statistic = d.point;
  r.se = d.se;
  r.z = r.se > 0.0 ? r.statistic / r.se : std::numeric_limits<double>::quiet_NaN();
  r.p_value = one_sided_p(r.statistic, r.se);
  r.n_users = n;
  r.method = PolicyMethod::blb;
  r.policy = policy.name;
  r.baseline = baseline.name;
  if (kpi < table.n_kpis()) r.kpi = table.kpi(kpi).name;
  return r;
}

void write_assignment_csv(std::ostream& out, const EncodedTable& table,
                          const ColumnLayout& layout, const PolicyAssignment& policy) {
  check_policy(policy, table.n_rows(), layout.n_treatment_levels());
  const Column* unit = table.unit_column();
  const auto& levels = layout.treatment_levels();
  out << "unit_id,action\n";
  for (std::size_t j = 0; j < table.n_rows(); ++j) {
    if (unit == nullptr) {
      out << j;
    } else if (unit->categorical()) {
      out << unit->level_of(j);
    } else {
      out << unit->values[j];
    }
    out << ',' << levels[policy.action[j]] << '\n';
  }
}

}  // namespace cfx
