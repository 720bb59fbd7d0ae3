#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cfx/blb.hpp"
#include "cfx/design.hpp"
#include "cfx/ingest.hpp"
#include "cfx/solver.hpp"

namespace cfx {

/// Per-user x action availability. Action 0 (control) is always allowed.
struct EligibilityMask {
  std::size_t n_users = 0;
  std::size_t n_actions = 0;
  std::vector<std::uint8_t> allowed;  // row-major n_users x n_actions

  bool operator()(std::size_t user, std::size_t action) const {
    return allowed[user * n_actions + action] != 0;
  }
  void set(std::size_t user, std::size_t action, bool on) {
    allowed[user * n_actions + action] = (on || action == 0) ? 1 : 0;
  }

  static EligibilityMask all(std::size_t n_users, std::size_t n_actions);
};

/// Reads the table's eligibility column: a '|'-separated list of treatment
/// levels, or "*" for every level. Without such a column everything is allowed.
/// Errors: UnknownLevel.
EligibilityMask eligibility_from_table(const EncodedTable& table, const ColumnLayout& layout);

/// delta(j, k): predicted effect of action k versus control for user j.
struct EffectsMatrix {
  std::size_t n_users = 0;
  std::size_t n_actions = 0;
  std::vector<double> delta;          // row-major; NaN where unavailable
  std::vector<std::uint8_t> available;

  double operator()(std::size_t user, std::size_t action) const {
    return delta[user * n_actions + action];
  }
  bool is_available(std::size_t user, std::size_t action) const {
    return available[user * n_actions + action] != 0;
  }
};

EffectsMatrix individual_effects(const FitResult& fit, const ColumnLayout& layout,
                                 const EncodedTable& table, const EligibilityMask& mask,
                                 std::size_t kpi = 0);

struct PolicyAssignment {
  std::string name;
  std::vector<std::uint32_t> action;  // per user
};

/// Argmax over available actions; ties go to the lowest index, so control wins.
/// Errors: NoEligibleAction.
PolicyAssignment greedy_policy(const EffectsMatrix& effects);

PolicyAssignment constant_policy(std::size_t n_users, std::uint32_t action,
                                 std::string name = "constant");

enum class PolicyMethod { delta, blb };
std::string_view to_string(PolicyMethod method);

struct PolicyEvalResult {
  double statistic = 0.0;  // T, summed predicted reward difference in KPI units
  double se = 0.0;
  double z = 0.0;          // NaN when se == 0
  double p_value = 0.5;    // one-sided, H_A: T > 0
  std::size_t n_users = 0;
  PolicyMethod method = PolicyMethod::delta;
  std::string kpi;
  std::string policy;
  std::string baseline;
};

/// c = sum_j [m(x_j, pi(j)) - m(x_j, pi0(j))], so that T = c' beta.
/// Errors: DimensionMismatch.
Eigen::VectorXd policy_contrast(const ColumnLayout& layout, const EncodedTable& table,
                                const PolicyAssignment& policy,
                                const PolicyAssignment& baseline);

/// One-sided p-value for T with standard error se; 0.5 at T = se = 0.
double one_sided_p(double t, double se);

/// Delta method: se = sqrt(c' V c). Errors: CovKindUnavailable.
PolicyEvalResult evaluate_policy(const FitResult& fit, CovKind cov_kind,
                                 const ColumnLayout& layout, const EncodedTable& table,
                                 const PolicyAssignment& policy,
                                 const PolicyAssignment& baseline, std::size_t kpi = 0);

/// T with its BLB standard error; resamples reweight both the fit and the sum
/// over users. `data` must hold the table's rows in order.
PolicyEvalResult evaluate_policy_blb(const WeightedData& data, const ColumnLayout& layout,
                                     const EncodedTable& table,
                                     const PolicyAssignment& policy,
                                     const PolicyAssignment& baseline,
                                     const BlbConfig& config, std::size_t kpi = 0);

/// CSV with header "unit_id,action"; unit ids come from the unit column when
/// present, else the 0-based row index.
void write_assignment_csv(std::ostream& out, const EncodedTable& table,
                          const ColumnLayout& layout, const PolicyAssignment& policy);

}  // namespace cfx
