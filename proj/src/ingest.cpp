#include "cfx/ingest.hpp"

#include <cmath>
#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <unordered_map>

#include "cfx/error.hpp"
#include "cfx/stats.hpp"

namespace cfx {
namespace {

constexpr std::pair<ColumnKind, std::string_view> kKindNames[] = {
    {ColumnKind::numeric, "numeric"},         {ColumnKind::categorical, "categorical"},
    {ColumnKind::treatment, "treatment"},     {ColumnKind::unit_id, "unit_id"},
    {ColumnKind::time_period, "time_period"}, {ColumnKind::cluster_id, "cluster_id"},
    {ColumnKind::kpi, "kpi"},                 {ColumnKind::instrument, "instrument"},
    {ColumnKind::eligibility, "eligibility"},
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

// Splits one CSV record. Handles quoted fields and doubled quotes; embedded
// newlines inside quotes are not supported.
void split_record(const std::string& line, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r' || i + 1 != line.size()) {
      field += ch;
    }
  }
  out.push_back(std::move(field));
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

// Sorts the provisional dictionary and rewrites codes so code 0 is the
// lexicographically smallest level.
void finalize_dictionary(Column& col) {
  std::vector<std::uint32_t> order(col.levels.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return col.levels[a] < col.levels[b]; });
  std::vector<std::uint32_t> remap(order.size());
  std::vector<std::string> sorted(order.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) {
    remap[order[i]] = i;
    sorted[i] = std::move(col.levels[order[i]]);
  }
  for (auto& c : col.codes) c = remap[c];
  col.levels = std::move(sorted);
}

}  // namespace

std::string_view to_string(ColumnKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<ColumnKind> parse_column_kind(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  return std::nullopt;
}

bool is_categorical(ColumnKind kind) {
  return kind != ColumnKind::numeric && kind != ColumnKind::kpi;
}

void Schema::validate() const {
  std::map<ColumnKind, int> counts;
  std::vector<std::string> names;
  for (const auto& c : columns) {
    ++counts[c.kind];
    names.push_back(c.name);
  }
  std::sort(names.begin(), names.end());
  if (auto dup = std::adjacent_find(names.begin(), names.end()); dup != names.end()) {
    throw config_error("DuplicateColumn", "column '" + *dup + "' declared twice",
                       {{"column", *dup}});
  }
  if (counts[ColumnKind::treatment] != 1) {
    throw config_error("InvalidSchema", "schema needs exactly one treatment column");
  }
  if (counts[ColumnKind::kpi] < 1) {
    throw config_error("InvalidSchema", "schema needs at least one kpi column");
  }
  for (auto kind : {ColumnKind::time_period, ColumnKind::cluster_id, ColumnKind::unit_id}) {
    if (counts[kind] > 1) {
      throw config_error("InvalidSchema",
                         "at most one " + std::string(to_string(kind)) + " column allowed");
    }
  }
}

std::optional<std::uint32_t> Column::code_of(std::string_view level) const {
  auto it = std::lower_bound(levels.begin(), levels.end(), level);
  if (it == levels.end() || *it != level) return std::nullopt;
  return static_cast<std::uint32_t>(it - levels.begin());
}

Column encode_categorical(std::string name, ColumnKind kind,
                          std::span<const std::string> raw) {
  Column col;
  col.name = std::move(name);
  col.kind = kind;
  std::unordered_map<std::string, std::uint32_t> seen;
  col.codes.reserve(raw.size());
  for (const auto& s : raw) {
    auto [it, inserted] = seen.try_emplace(s, static_cast<std::uint32_t>(col.levels.size()));
    if (inserted) col.levels.push_back(s);
    col.codes.push_back(it->second);
  }
  finalize_dictionary(col);
  return col;
}

EncodedTable EncodedTable::from_columns(std::vector<Column> columns) {
  Schema schema;
  for (const auto& c : columns) schema.columns.push_back({c.name, c.kind});
  schema.validate();

  EncodedTable t;
  t.n_rows_ = columns.empty() ? 0 : columns.front().size();
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const Column& c = columns[i];
    if (c.size() != t.n_rows_) {
      throw data_error("LengthMismatch", "column '" + c.name + "' has the wrong length",
                       {{"column", c.name}});
    }
    if (c.categorical()) {
      if (!std::is_sorted(c.levels.begin(), c.levels.end()) ||
          std::adjacent_find(c.levels.begin(), c.levels.end()) != c.levels.end()) {
        throw data_error("InvalidDictionary",
                         "levels of '" + c.name + "' must be sorted and unique",
                         {{"column", c.name}});
      }
      for (auto code : c.codes) {
        if (code >= c.levels.size()) {
          throw data_error("InvalidDictionary", "code out of range in '" + c.name + "'",
                           {{"column", c.name}});
        }
      }
    } else {
      for (double v : c.values) {
        if (!std::isfinite(v)) {
          throw data_error("UnparseableValue", "non-finite value in '" + c.name + "'",
                           {{"column", c.name}});
        }
      }
    }
    if (c.kind == ColumnKind::treatment) t.treatment_ = i;
    if (c.kind == ColumnKind::kpi) t.kpis_.push_back(i);
  }
  t.columns_ = std::move(columns);
  return t;
}

const Column* EncodedTable::find(std::string_view name) const {
  for (const auto& c : columns_) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

const Column& EncodedTable::column(std::string_view name) const {
  if (const Column* c = find(name)) return *c;
  throw config_error("UnknownColumn", "unknown column '" + std::string(name) + "'",
                     {{"column", std::string(name)}});
}

std::size_t EncodedTable::index_of(std::string_view name) const {
  return static_cast<std::size_t>(&column(name) - columns_.data());
}

std::vector<std::string> EncodedTable::kpi_names() const {
  std::vector<std::string> out;
  for (auto i : kpis_) out.push_back(columns_[i].name);
  return out;
}

namespace {
const Column* first_of_kind(const std::vector<Column>& cols, ColumnKind kind) {
  for (const auto& c : cols) {
    if (c.kind == kind) return &c;
  }
  return nullptr;
}
}  // namespace

const Column* EncodedTable::time_column() const {
  return first_of_kind(columns_, ColumnKind::time_period);
}
const Column* EncodedTable::cluster_column() const {
  return first_of_kind(columns_, ColumnKind::cluster_id);
}
const Column* EncodedTable::unit_column() const {
  return first_of_kind(columns_, ColumnKind::unit_id);
}
const Column* EncodedTable::eligibility_column() const {
  return first_of_kind(columns_, ColumnKind::eligibility);
}

EncodedTable EncodedTable::select_rows(std::span<const std::size_t> rows) const {
  EncodedTable out = *this;
  for (auto& c : out.columns_) {
    if (c.categorical()) {
      std::vector<std::uint32_t> codes(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) codes[i] = c.codes.at(rows[i]);
      c.codes = std::move(codes);
    } else {
      std::vector<double> values(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) values[i] = c.values.at(rows[i]);
      c.values = std::move(values);
    }
  }
  out.n_rows_ = rows.size();
  return out;
}

Schema EncodedTable::schema() const {
  Schema s;
  for (const auto& c : columns_) s.columns.push_back({c.name, c.kind});
  return s;
}

EncodedTable load_table(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("FileNotFound", "cannot open '" + path + "'", {{"path", path}});
  }
  return load_table(in, schema);
}

EncodedTable load_table(std::istream& in, const Schema& schema) {
  schema.validate();

  std::string line;
  if (!std::getline(in, line)) {
    throw data_error("MissingHeader", "input has no header row");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> fields;
  split_record(line, fields);

  // Position of each schema column in the file.
  std::vector<std::size_t> position(schema.columns.size());
  for (std::size_t i = 0; i < schema.columns.size(); ++i) {
    const auto& name = schema.columns[i].name;
    auto it = std::find_if(fields.begin(), fields.end(),
                           [&](const std::string& f) { return trim(f) == name; });
    if (it == fields.end()) {
      throw data_error("MissingColumn", "column '" + name + "' not found in header",
                       {{"column", name}});
    }
    position[i] = static_cast<std::size_t>(it - fields.begin());
  }
  const std::size_t n_fields = fields.size();

  std::vector<Column> cols(schema.columns.size());
  std::vector<std::unordered_map<std::string, std::uint32_t>> dicts(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    cols[i].name = schema.columns[i].name;
    cols[i].kind = schema.columns[i].kind;
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    split_record(line, fields);
    if (fields.size() != n_fields) {
      throw data_error("MalformedRow",
                       "row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                           " fields, expected " + std::to_string(n_fields),
                       {{"row", std::to_string(row)}});
    }
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const std::string& cell = fields[position[i]];
      Column& col = cols[i];
      if (trim(cell).empty()) {
        throw data_error("MissingValue",
                         "missing value at row " + std::to_string(row) + ", column '" +
                             col.name + "'",
                         {{"row", std::to_string(row)}, {"column", col.name}});
      }
      if (col.categorical()) {
        std::string level(trim(cell));
        auto [it, inserted] =
            dicts[i].try_emplace(level, static_cast<std::uint32_t>(col.levels.size()));
        if (inserted) col.levels.push_back(std::move(level));
        col.codes.push_back(it->second);
      } else {
        double v = 0.0;
        if (!parse_double(cell, v)) {
          throw data_error("UnparseableValue",
                           "cannot parse '" + cell + "' at row " + std::to_string(row) +
                               ", column '" + col.name + "'",
                           {{"row", std::to_string(row)}, {"column", col.name}});
        }
        col.values.push_back(v);
      }
    }
  }

  for (auto& c : cols) {
    if (c.categorical()) finalize_dictionary(c);
  }
  return EncodedTable::from_columns(std::move(cols));
}

SummaryReport summarize(const EncodedTable& table) {
  SummaryReport report;
  report.n_rows = table.n_rows();
  for (const auto& c : table.columns()) {
    ColumnSummary s{c.name, c.kind, c.size(), std::nullopt, std::nullopt};
    if (c.categorical()) {
      s.cardinality = c.levels.size();
    } else if (!c.values.empty()) {
      s.mean = stats::mean(c.values);
    }
    report.columns.push_back(std::move(s));
  }
  return report;
}

}  // namespace cfx
