#include "cfx/design.hpp"

#include <algorithm>

#include "cfx/error.hpp"

namespace cfx {
namespace {

std::string level_name(const std::string& column, const std::string& level) {
  return column + "[" + level + "]";
}

}  // namespace

std::vector<std::string> ColumnLayout::names() const {
  std::vector<std::string> out;
  out.reserve(columns_.size());
  for (const auto& c : columns_) out.push_back(c.name);
  return out;
}

std::size_t ColumnLayout::treatment_column(std::uint32_t k) const {
  if (k == 0 || k >= treatment_levels_.size()) {
    throw config_error("UnknownLevel", "treatment level index out of range");
  }
  return k;  // treatment dummies occupy columns 1..K-1
}

std::span<const std::size_t> ColumnLayout::interaction_columns(std::uint32_t k) const {
  return owned_.at(k);
}

void ColumnLayout::emit_row(const EncodedTable& table, std::size_t row,
                            std::vector<Entry>& out) const {
  emit_row(table, row, table.columns()[treatment_source_].codes[row], out);
}

void ColumnLayout::emit_row(const EncodedTable& table, std::size_t row, std::uint32_t level,
                            std::vector<Entry>& out) const {
  const auto& cols = table.columns();
  out.push_back({0, 1.0});
  if (level > 0) out.push_back({static_cast<std::uint32_t>(level), 1.0});

  auto emit_source = [&](const Source& s) {
    const Column& col = cols[s.table_column];
    if (s.categorical) {
      const std::uint32_t code = col.codes[row];
      if (code > 0) out.push_back({static_cast<std::uint32_t>(s.first_design_column + code - 1), 1.0});
    } else {
      const double v = col.values[row];
      if (v != 0.0) out.push_back({static_cast<std::uint32_t>(s.first_design_column), v});
    }
  };

  const std::size_t x_first = out.size();
  for (const auto& s : covariates_) emit_source(s);
  const std::size_t x_last = out.size();

  std::uint32_t period = 0;
  if (time_source_ != kNone) {
    period = cols[time_source_].codes[row];
    if (period > 0) {
      out.push_back({static_cast<std::uint32_t>(period_begin_ + period - 1), 1.0});
    }
  }
  for (const auto& s : instruments_) emit_source(s);

  if (level == 0) return;
  if (interact_x_) {
    const std::size_t offset = ax_begin_ + (level - 1) * (x_end_ - x_begin_);
    for (std::size_t i = x_first; i < x_last; ++i) {
      const Entry e = out[i];
      out.push_back({static_cast<std::uint32_t>(offset + e.col - x_begin_), e.value});
    }
  }
  if (interact_t_ && period > 0) {
    const std::size_t n_t = period_levels_.size() - 1;
    out.push_back({static_cast<std::uint32_t>(at_begin_ + (level - 1) * n_t + period - 1), 1.0});
  }
}

void ColumnLayout::check_compatible(const EncodedTable& table) const {
  const auto& cols = table.columns();
  for (std::size_t i = 0; i < level_counts_.size(); ++i) {
    if (level_counts_[i] == kNone) continue;
    if (i >= cols.size() ||
        (cols[i].categorical() ? cols[i].levels.size() : 0) != level_counts_[i]) {
      throw data_error("IncompatibleTable", "table does not match the model layout");
    }
  }
}

ColumnLayout build_layout(const DesignSpec& spec, const EncodedTable& table) {
  ColumnLayout layout;
  layout.spec_ = spec;
  layout.level_counts_.assign(table.columns().size(), kNone);

  auto track = [&](std::size_t source) {
    const Column& c = table.columns()[source];
    layout.level_counts_[source] = c.categorical() ? c.levels.size() : 0;
  };
  auto push = [&](DesignColumn col) {
    layout.columns_.push_back(std::move(col));
    return layout.columns_.size() - 1;
  };
  auto block = [&](std::string term, std::size_t begin) {
    if (layout.columns_.size() > begin) {
      layout.blocks_.push_back({std::move(term), begin, layout.columns_.size()});
    }
  };

  // Treatment.
  const std::size_t treat = table.index_of(spec.treatment);
  const Column& treat_col = table.columns()[treat];
  if (!treat_col.categorical()) {
    throw config_error("TreatmentNotCategorical",
                       "treatment '" + spec.treatment + "' must be categorical",
                       {{"column", spec.treatment}});
  }
  if (treat_col.levels.size() < 2) {
    throw data_error("FewerThanTwoTreatmentLevels",
                     "treatment '" + spec.treatment + "' needs at least two levels",
                     {{"column", spec.treatment}});
  }
  layout.treatment_source_ = treat;
  layout.treatment_levels_ = treat_col.levels;
  track(treat);
  const auto n_levels = static_cast<std::uint32_t>(treat_col.levels.size());

  push({"(intercept)", TermRole::intercept});
  layout.blocks_.push_back({"(intercept)", 0, 1});
  for (std::uint32_t k = 1; k < n_levels; ++k) {
    push({level_name(spec.treatment, treat_col.levels[k]), TermRole::treatment, k, treat});
  }
  block(spec.treatment, 1);

  if (spec.interact_treatment_time && !spec.time) {
    throw config_error("InvalidDesign", "interact_treatment_time requires a time column");
  }

  // Covariates (X) and instruments (Z) share the encoding rule.
  std::vector<std::string> used{spec.treatment};
  auto add_source = [&](const std::string& name, TermRole role,
                        std::vector<ColumnLayout::Source>& into) {
    if (std::find(used.begin(), used.end(), name) != used.end()) {
      throw config_error("InvalidDesign", "column '" + name + "' used twice in the design",
                         {{"column", name}});
    }
    used.push_back(name);
    const std::size_t src = table.index_of(name);
    const Column& c = table.columns()[src];
    const bool ok = c.kind == ColumnKind::numeric || c.kind == ColumnKind::categorical ||
                    (role == TermRole::instrument && c.kind == ColumnKind::instrument);
    if (!ok) {
      throw config_error("InvalidDesign",
                         "column '" + name + "' of kind " + std::string(to_string(c.kind)) +
                             " cannot be used here",
                         {{"column", name}});
    }
    track(src);
    const std::size_t first = layout.columns_.size();
    if (c.categorical()) {
      for (std::size_t l = 1; l < c.levels.size(); ++l) {
        push({level_name(name, c.levels[l]), role, 0, src, static_cast<std::int64_t>(l)});
      }
    } else {
      push({name, role, 0, src, -1});
    }
    into.push_back({src, c.categorical(), first, layout.columns_.size() - first});
    block(name, first);
  };

  layout.x_begin_ = layout.columns_.size();
  for (const auto& name : spec.covariates) add_source(name, TermRole::covariate, layout.covariates_);
  layout.x_end_ = layout.columns_.size();

  layout.period_begin_ = layout.columns_.size();
  if (spec.time) {
    if (std::find(used.begin(), used.end(), *spec.time) != used.end()) {
      throw config_error("InvalidDesign", "time column must not also be a covariate",
                         {{"column", *spec.time}});
    }
    used.push_back(*spec.time);
    const std::size_t src = table.index_of(*spec.time);
    const Column& c = table.columns()[src];
    if (!c.categorical()) {
      throw config_error("InvalidDesign", "time column must be categorical",
                         {{"column", *spec.time}});
    }
    track(src);
    layout.time_source_ = src;
    layout.period_levels_ = c.levels;
    for (std::size_t t = 1; t < c.levels.size(); ++t) {
      push({level_name(*spec.time, c.levels[t]), TermRole::period, 0, src,
            static_cast<std::int64_t>(t)});
    }
    block(*spec.time, layout.period_begin_);
  }

  for (const auto& name : spec.instruments) {
    add_source(name, TermRole::instrument, layout.instruments_);
  }

  for (std::size_t j = 1; j < layout.columns_.size(); ++j) {
    const auto role = layout.columns_[j].role;
    if (role == TermRole::covariate || role == TermRole::period || role == TermRole::instrument) {
      layout.base_columns_.push_back(j);
    }
  }

  layout.owned_.assign(n_levels, {});
  layout.interact_x_ = spec.interact_treatment_covariates && layout.x_end_ > layout.x_begin_;
  layout.ax_begin_ = layout.columns_.size();
  if (layout.interact_x_) {
    for (std::uint32_t k = 1; k < n_levels; ++k) {
      const std::string prefix = level_name(spec.treatment, treat_col.levels[k]) + ":";
      for (const auto& s : layout.covariates_) {
        const std::size_t first = layout.columns_.size();
        for (std::size_t j = s.first_design_column; j < s.first_design_column + s.n_design_columns; ++j) {
          DesignColumn col = layout.columns_[j];
          col.name = prefix + col.name;
          col.role = TermRole::treatment_covariate;
          col.treatment_level = k;
          col.base = j;
          layout.owned_[k].push_back(push(std::move(col)));
        }
        block(prefix + table.columns()[s.table_column].name, first);
      }
    }
  }

  layout.interact_t_ = spec.interact_treatment_time && layout.period_levels_.size() > 1;
  layout.at_begin_ = layout.columns_.size();
  if (layout.interact_t_) {
    for (std::uint32_t k = 1; k < n_levels; ++k) {
      const std::string prefix = level_name(spec.treatment, treat_col.levels[k]) + ":";
      const std::size_t first = layout.columns_.size();
      for (std::size_t t = 1; t < layout.period_levels_.size(); ++t) {
        const std::size_t base = layout.period_begin_ + t - 1;
        DesignColumn col = layout.columns_[base];
        col.name = prefix + col.name;
        col.role = TermRole::treatment_period;
        col.treatment_level = k;
        col.base = base;
        layout.owned_[k].push_back(push(std::move(col)));
      }
      block(prefix + *spec.time, first);
    }
  }
  return layout;
}

std::size_t SparseDesignMatrix::bytes() const {
  return col_ptr.size() * sizeof(std::size_t) + row_idx.size() * sizeof(std::uint32_t) +
         values.size() * sizeof(double);
}

Eigen::MatrixXd SparseDesignMatrix::to_dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows),
                                              static_cast<Eigen::Index>(n_cols));
  for (std::size_t j = 0; j < n_cols; ++j) {
    for (std::size_t k = col_ptr[j]; k < col_ptr[j + 1]; ++k) {
      out(row_idx[k], static_cast<Eigen::Index>(j)) = values[k];
    }
  }
  return out;
}

std::size_t CsrMatrix::bytes() const {
  return row_ptr.size() * sizeof(std::size_t) + col_idx.size() * sizeof(std::uint32_t) +
         values.size() * sizeof(double);
}

Eigen::MatrixXd CsrMatrix::to_dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows),
                                              static_cast<Eigen::Index>(n_cols));
  for (std::size_t i = 0; i < n_rows; ++i) {
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      out(static_cast<Eigen::Index>(i), col_idx[k]) = values[k];
    }
  }
  return out;
}

SparseDesignMatrix build_design(const EncodedTable& table, const ColumnLayout& layout) {
  layout.check_compatible(table);
  SparseDesignMatrix m;
  m.n_rows = table.n_rows();
  m.n_cols = layout.p();
  m.col_ptr.assign(m.n_cols + 1, 0);

  std::vector<Entry> row;
  for (std::size_t i = 0; i < m.n_rows; ++i) {
    row.clear();
    layout.emit_row(table, i, row);
    for (const auto& e : row) ++m.col_ptr[e.col + 1];
  }
  for (std::size_t j = 0; j < m.n_cols; ++j) m.col_ptr[j + 1] += m.col_ptr[j];

  m.row_idx.resize(m.col_ptr.back());
  m.values.resize(m.col_ptr.back());
  std::vector<std::size_t> cursor(m.col_ptr.begin(), m.col_ptr.end() - 1);
  for (std::size_t i = 0; i < m.n_rows; ++i) {
    row.clear();
    layout.emit_row(table, i, row);
    for (const auto& e : row) {
      const std::size_t at = cursor[e.col]++;
      m.row_idx[at] = static_cast<std::uint32_t>(i);
      m.values[at] = e.value;
    }
  }
  return m;
}

CsrMatrix to_csr(const SparseDesignMatrix& m) {
  CsrMatrix r;
  r.n_rows = m.n_rows;
  r.n_cols = m.n_cols;
  r.row_ptr.assign(m.n_rows + 1, 0);
  for (auto i : m.row_idx) ++r.row_ptr[i + 1];
  for (std::size_t i = 0; i < m.n_rows; ++i) r.row_ptr[i + 1] += r.row_ptr[i];
  r.col_idx.resize(m.nnz());
  r.values.resize(m.nnz());
  std::vector<std::size_t> cursor(r.row_ptr.begin(), r.row_ptr.end() - 1);
  for (std::size_t j = 0; j < m.n_cols; ++j) {
    for (std::size_t k = m.col_ptr[j]; k < m.col_ptr[j + 1]; ++k) {
      const std::size_t at = cursor[m.row_idx[k]]++;
      r.col_idx[at] = static_cast<std::uint32_t>(j);
      r.values[at] = m.values[k];
    }
  }
  return r;
}

CsrMatrix build_design_csr(const EncodedTable& table, const ColumnLayout& layout) {
  layout.check_compatible(table);
  CsrMatrix r;
  r.n_rows = table.n_rows();
  r.n_cols = layout.p();
  r.row_ptr.reserve(r.n_rows + 1);
  r.row_ptr.push_back(0);
  std::vector<Entry> row;
  for (std::size_t i = 0; i < r.n_rows; ++i) {
    row.clear();
    layout.emit_row(table, i, row);
    for (const auto& e : row) {
      r.col_idx.push_back(e.col);
      r.values.push_back(e.value);
    }
    r.row_ptr.push_back(r.values.size());
  }
  return r;
}

std::string Segment::descriptor() const {
  if (predicates.empty()) return "all";
  std::string out;
  for (const auto& [col, level] : predicates) {
    if (!out.empty()) out += "&";
    out += col + "=" + level;
  }
  return out;
}

Segment Segment::parse(std::string_view text) {
  Segment s;
  if (text == "all" || text.empty()) return s;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('&', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view part = text.substr(start, end - start);
    const std::size_t eq = part.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw config_error("InvalidSegment", "segment predicates look like column=level",
                         {{"segment", std::string(text)}});
    }
    s.predicates.emplace_back(std::string(part.substr(0, eq)), std::string(part.substr(eq + 1)));
    start = end + 1;
  }
  return s;
}

std::vector<std::uint8_t> segment_selector(const EncodedTable& table,
                                           const ColumnLayout& layout,
                                           const Segment& segment,
                                           std::optional<std::uint32_t> period) {
  std::vector<std::pair<const Column*, std::uint32_t>> tests;
  const auto& covs = layout.spec().covariates;
  for (const auto& [name, level] : segment.predicates) {
    const Column& col = table.column(name);
    if (std::find(covs.begin(), covs.end(), name) == covs.end() || !col.categorical()) {
      throw config_error("SegmentNotCovariate",
                         "segment column '" + name + "' must be a categorical covariate",
                         {{"column", name}});
    }
    auto code = col.code_of(level);
    if (!code) {
      throw config_error("UnknownLevel", "level '" + level + "' not found in '" + name + "'",
                         {{"column", name}, {"level", level}});
    }
    tests.emplace_back(&col, *code);
  }
  const Column* time = nullptr;
  if (period) {
    if (!layout.has_time()) {
      throw config_error("InvalidDesign", "period requested but the design has no time column");
    }
    if (*period >= layout.n_periods()) {
      throw config_error("UnknownLevel", "period index out of range");
    }
    time = &table.columns()[layout.time_source()];
  }

  std::vector<std::uint8_t> sel(table.n_rows(), 1);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    for (const auto& [col, code] : tests) {
      if (col->codes[i] != code) {
        sel[i] = 0;
        break;
      }
    }
    if (time && time->codes[i] != *period) sel[i] = 0;
  }
  return sel;
}

SegmentMeans segment_means(const SparseDesignMatrix& m, const ColumnLayout& layout,
                           std::span<const std::size_t> segment_of_row,
                           std::size_t n_segments) {
  SegmentMeans out;
  out.counts.assign(n_segments, 0);
  for (auto s : segment_of_row) {
    if (s != kNone) ++out.counts[s];
  }
  out.means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_segments),
                                    static_cast<Eigen::Index>(m.n_cols));
  for (std::size_t j : layout.base_columns()) {
    for (std::size_t k = m.col_ptr[j]; k < m.col_ptr[j + 1]; ++k) {
      const std::size_t s = segment_of_row[m.row_idx[k]];
      if (s != kNone) out.means(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) += m.values[k];
    }
  }
  for (std::size_t s = 0; s < n_segments; ++s) {
    if (out.counts[s] > 0) out.means.row(static_cast<Eigen::Index>(s)) /= static_cast<double>(out.counts[s]);
  }
  return out;
}

ContrastVector contrast_from_means(const ColumnLayout& layout, std::uint32_t k,
                                   const Eigen::Ref<const Eigen::RowVectorXd>& base_means,
                                   std::size_t n_segment) {
  if (k == 0) {
    throw config_error("ReferenceLevelRequested",
                       "the reference treatment level has no effect against itself",
                       {{"treatment", layout.treatment_levels().at(0)}});
  }
  ContrastVector cv;
  cv.c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.p()));
  cv.c(static_cast<Eigen::Index>(layout.treatment_column(k))) = 1.0;
  for (std::size_t j : layout.interaction_columns(k)) {
    cv.c(static_cast<Eigen::Index>(j)) = base_means(static_cast<Eigen::Index>(layout.column(j).base));
  }
  cv.treatment_level = k;
  cv.treatment = layout.treatment_levels()[k];
  cv.n_segment = n_segment;
  return cv;
}

ContrastVector effect_contrast(const ColumnLayout& layout, const SparseDesignMatrix& m,
                               const EncodedTable& table, std::uint32_t treatment_level,
                               const Segment& segment, std::optional<std::uint32_t> period) {
  if (treatment_level == 0) {
    throw config_error("ReferenceLevelRequested",
                       "the reference treatment level has no effect against itself",
                       {{"treatment", layout.treatment_levels().at(0)}});
  }
  if (treatment_level >= layout.n_treatment_levels()) {
    throw config_error("UnknownLevel", "treatment level index out of range");
  }
  const auto sel = segment_selector(table, layout, segment, period);
  std::vector<std::size_t> seg(sel.size());
  for (std::size_t i = 0; i < sel.size(); ++i) seg[i] = sel[i] ? 0 : kNone;
  const SegmentMeans means = segment_means(m, layout, seg, 1);
  if (means.counts[0] == 0) {
    throw data_error("EmptySegment", "segment '" + segment.descriptor() + "' selects no rows",
                     {{"segment", segment.descriptor()}});
  }
  ContrastVector cv = contrast_from_means(layout, treatment_level, means.means.row(0), means.counts[0]);
  cv.segment = segment.descriptor();
  if (period) cv.period = layout.period_levels()[*period];
  return cv;
}

}  // namespace cfx
