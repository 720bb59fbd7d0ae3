#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cfx/design.hpp"
#include "cfx/ingest.hpp"
#include "cfx/solver.hpp"

namespace cfx {

/// One row per distinct design row (per cluster, when clustered), carrying
/// the count n_g and per-KPI sums of y and y^2. Fits on `data` reproduce the
/// raw-row estimates exactly for models that are linear in parameters.
struct CompressedDataset {
  WeightedData data;
  std::vector<std::string> term_names;
  std::vector<std::string> kpi_names;
  std::size_t n_total = 0;

  std::size_t groups() const { return data.rows(); }
};

struct CompressOptions {
  /// Keep groups inside clusters when the table has a cluster_id column.
  bool by_cluster = true;
};

/// Groups rows by their exact design row (covariate values compared bitwise).
/// Groups are ordered by an encoding of (cluster, row pattern), so the
/// result does not depend on input row order.
CompressedDataset compress(const EncodedTable& table, const ColumnLayout& layout,
                           const CompressOptions& options = {});

double compression_ratio(const CompressedDataset& cd);

/// Little-endian, length-prefixed binary with a "CFXC" magic and version.
void write_compressed(const CompressedDataset& cd, std::ostream& out);
CompressedDataset read_compressed(std::istream& in);

}  // namespace cfx
