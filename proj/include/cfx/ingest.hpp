#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfx {

enum class ColumnKind {
  numeric,
  categorical,
  treatment,
  unit_id,
  time_period,
  cluster_id,
  kpi,
  instrument,
  eligibility,
};

std::string_view to_string(ColumnKind kind);
std::optional<ColumnKind> parse_column_kind(std::string_view text);

/// Numeric and kpi columns hold doubles; every other kind is dictionary encoded.
bool is_categorical(ColumnKind kind);

struct ColumnSpec {
  std::string name;
  ColumnKind kind;
};

struct Schema {
  std::vector<ColumnSpec> columns;

  /// Throws a config error unless: exactly one treatment column, at least one
  /// kpi, at most one time_period / cluster_id / unit_id column, unique names.
  void validate() const;
};

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<double> values;          // numeric kinds
  std::vector<std::uint32_t> codes;    // categorical kinds
  std::vector<std::string> levels;     // sorted; code 0 is the reference level

  bool categorical() const { return is_categorical(kind); }
  std::size_t size() const { return categorical() ? codes.size() : values.size(); }
  std::optional<std::uint32_t> code_of(std::string_view level) const;
  const std::string& level_of(std::size_t row) const { return levels[codes[row]]; }
};

/// Builds a dictionary-encoded column from raw strings (levels sorted
/// lexicographically).
Column encode_categorical(std::string name, ColumnKind kind,
                          std::span<const std::string> raw);

/// Immutable-after-construction columnar table.
class EncodedTable {
 public:
  EncodedTable() = default;

  /// Validates column lengths, dictionaries and the schema invariants.
  static EncodedTable from_columns(std::vector<Column> columns);

  std::size_t n_rows() const { return n_rows_; }
  const std::vector<Column>& columns() const { return columns_; }

  const Column* find(std::string_view name) const;
  /// Throws UnknownColumn.
  const Column& column(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const Column& treatment() const { return columns_[treatment_]; }
  const std::vector<std::size_t>& kpi_columns() const { return kpis_; }
  std::size_t n_kpis() const { return kpis_.size(); }
  const Column& kpi(std::size_t j) const { return columns_[kpis_[j]]; }
  std::vector<std::string> kpi_names() const;

  const Column* time_column() const;
  const Column* cluster_column() const;
  const Column* unit_column() const;
  const Column* eligibility_column() const;

  /// Row subset that keeps every level dictionary intact.
  EncodedTable select_rows(std::span<const std::size_t> rows) const;

  Schema schema() const;

 private:
  std::vector<Column> columns_;
  std::size_t n_rows_ = 0;
  std::size_t treatment_ = 0;
  std::vector<std::size_t> kpis_;
};

/// Loads a UTF-8, comma separated CSV with a header row. Columns absent from
/// the schema are ignored. Blank cells are MissingValue errors.
EncodedTable load_table(const std::string& path, const Schema& schema);
EncodedTable load_table(std::istream& in, const Schema& schema);

struct ColumnSummary {
  std::string name;
  ColumnKind kind;
  std::size_t count = 0;
  std::optional<std::size_t> cardinality;
  std::optional<double> mean;
};

struct SummaryReport {
  std::size_t n_rows = 0;
  std::vector<ColumnSummary> columns;
};

SummaryReport summarize(const EncodedTable& table);

}  // namespace cfx
