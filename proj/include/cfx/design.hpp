#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfx/ingest.hpp"

namespace cfx {

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

/// Model specification for M = [1 | A | X | T | Z | A x X | A x T].
///
/// A is the one-hot treatment (reference level dropped), X the covariates,
/// T period dummies (present whenever `time` is set), Z instrument dummies
/// (two-stage fits only). Interaction blocks are treatment-major.
struct DesignSpec {
  std::string treatment;
  std::vector<std::string> covariates;
  bool interact_treatment_covariates = false;
  bool interact_treatment_time = false;
  std::optional<std::string> time;
  std::vector<std::string> instruments;
};

enum class TermRole {
  intercept,
  treatment,
  covariate,
  period,
  instrument,
  treatment_covariate,
  treatment_period,
};

struct DesignColumn {
  std::string name;
  TermRole role = TermRole::intercept;
  std::uint32_t treatment_level = 0;  // owning treatment level, 0 if none
  std::size_t source = kNone;         // table column index
  std::int64_t level = -1;            // categorical level code, -1 for numeric
  std::size_t base = kNone;           // interactions: the X/T column multiplied by A_k
};

/// Contiguous column range of one model term, e.g. "country" or "a[t1]:country".
struct TermBlock {
  std::string term;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct Entry {
  std::uint32_t col;
  double value;
};

class ColumnLayout {
 public:
  std::size_t p() const { return columns_.size(); }
  const std::vector<DesignColumn>& columns() const { return columns_; }
  const DesignColumn& column(std::size_t j) const { return columns_[j]; }
  std::vector<std::string> names() const;
  const std::vector<TermBlock>& blocks() const { return blocks_; }
  const DesignSpec& spec() const { return spec_; }

  /// K, including the reference (control) level.
  std::size_t n_treatment_levels() const { return treatment_levels_.size(); }
  const std::vector<std::string>& treatment_levels() const { return treatment_levels_; }
  std::size_t treatment_source() const { return treatment_source_; }
  /// Main-effect column of treatment level k (k >= 1).
  std::size_t treatment_column(std::uint32_t k) const;
  /// Interaction columns owned by level k (A_k x X, then A_k x T).
  std::span<const std::size_t> interaction_columns(std::uint32_t k) const;

  bool has_time() const { return time_source_ != kNone; }
  std::size_t time_source() const { return time_source_; }
  std::size_t n_periods() const { return period_levels_.size(); }
  const std::vector<std::string>& period_levels() const { return period_levels_; }

  /// Covariate-like columns (X, T, Z): the ones interactions may refer to.
  std::span<const std::size_t> base_columns() const { return base_columns_; }

  /// Appends the design row `row` (columns strictly increasing) to `out`.
  void emit_row(const EncodedTable& table, std::size_t row, std::vector<Entry>& out) const;
  /// Same row with the treatment forced to `level`; the counterfactual row.
  void emit_row(const EncodedTable& table, std::size_t row, std::uint32_t level,
                std::vector<Entry>& out) const;

  /// Throws unless `table` has the column kinds and level counts this layout was
  /// built from.
  void check_compatible(const EncodedTable& table) const;

 private:
  friend ColumnLayout build_layout(const DesignSpec& spec, const EncodedTable& table);

  struct Source {
    std::size_t table_column;
    bool categorical;
    std::size_t first_design_column;
    std::size_t n_design_columns;
  };

  DesignSpec spec_;
  std::vector<DesignColumn> columns_;
  std::vector<TermBlock> blocks_;
  std::vector<std::string> treatment_levels_;
  std::vector<std::string> period_levels_;
  std::vector<std::size_t> level_counts_;  // per table column, 0 for numeric
  std::size_t treatment_source_ = kNone;
  std::size_t time_source_ = kNone;
  std::vector<Source> covariates_;
  std::vector<Source> instruments_;
  std::size_t x_begin_ = 0, x_end_ = 0;
  std::size_t period_begin_ = 0;
  std::size_t ax_begin_ = 0, at_begin_ = 0;
  bool interact_x_ = false, interact_t_ = false;
  std::vector<std::vector<std::size_t>> owned_;  // per treatment level
  std::vector<std::size_t> base_columns_;
};

/// Errors: UnknownColumn, TreatmentNotCategorical, FewerThanTwoTreatmentLevels,
/// InvalidDesign.
ColumnLayout build_layout(const DesignSpec& spec, const EncodedTable& table);

/// Compressed sparse column storage. Row indices strictly increase within a
/// column; zeros are never stored.
struct SparseDesignMatrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> col_ptr;
  std::vector<std::uint32_t> row_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }
  std::size_t bytes() const;
  Eigen::MatrixXd to_dense() const;
};

/// Compressed sparse row storage used by the row-wise accumulators.
struct CsrMatrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }
  std::size_t bytes() const;
  Eigen::MatrixXd to_dense() const;
};

SparseDesignMatrix build_design(const EncodedTable& table, const ColumnLayout& layout);
CsrMatrix to_csr(const SparseDesignMatrix& m);
CsrMatrix build_design_csr(const EncodedTable& table, const ColumnLayout& layout);

/// Conjunction of equality predicates on categorical covariates; empty means
/// the whole population.
struct Segment {
  std::vector<std::pair<std::string, std::string>> predicates;

  std::string descriptor() const;
  /// Inverse of descriptor(). Errors: InvalidSegment.
  static Segment parse(std::string_view text);
};

/// 0/1 row selector for `segment`, optionally restricted to one period code.
/// Segment columns must be categorical covariates of the layout.
std::vector<std::uint8_t> segment_selector(const EncodedTable& table,
                                           const ColumnLayout& layout,
                                           const Segment& segment,
                                           std::optional<std::uint32_t> period = std::nullopt);

/// Per-segment column means of M, i.e. S^T M / n_S for the one-hot selector
/// matrix S given by `segment_of_row` (kNone = row excluded). Only the layout's
/// base columns are filled; the other entries are zero.
struct SegmentMeans {
  std::vector<std::size_t> counts;
  Eigen::MatrixXd means;  // n_segments x p
};

SegmentMeans segment_means(const SparseDesignMatrix& m, const ColumnLayout& layout,
                           std::span<const std::size_t> segment_of_row,
                           std::size_t n_segments);

struct ContrastVector {
  Eigen::VectorXd c;
  std::uint32_t treatment_level = 0;
  std::string treatment;
  std::string segment;
  std::optional<std::string> period;
  std::size_t n_segment = 0;
};

/// Contrast c with c^T beta = average counterfactual difference between level
/// k and the reference over the selected rows, given those rows' base-column
/// means.
ContrastVector contrast_from_means(const ColumnLayout& layout, std::uint32_t k,
                                   const Eigen::Ref<const Eigen::RowVectorXd>& base_means,
                                   std::size_t n_segment);

/// Errors: EmptySegment, ReferenceLevelRequested, UnknownLevel,
/// SegmentNotCovariate.
ContrastVector effect_contrast(const ColumnLayout& layout, const SparseDesignMatrix& m,
                               const EncodedTable& table, std::uint32_t treatment_level,
                               const Segment& segment,
                               std::optional<std::uint32_t> period = std::nullopt);

}  // namespace cfx
