#include "cfx/compress.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "cfx/error.hpp"
#include "cfx/parallel.hpp"
#include "cfx/stats.hpp"

namespace cfx {
namespace {

constexpr char kMagic[4] = {'C', 'F', 'X', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32_be(std::string& key, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) key.push_back(static_cast<char>((v >> s) & 0xFF));
}

void put_u64_be(std::string& key, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) key.push_back(static_cast<char>((v >> s) & 0xFF));
}

std::uint64_t get_be(const std::string& key, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v = (v << 8) | static_cast<unsigned char>(key[at + i]);
  return v;
}

struct Partial {
  std::unordered_map<std::string, std::uint32_t> index;
  std::vector<std::string> keys;
  std::vector<std::size_t> count;
  std::vector<stats::CompensatedSum> sy;   // group x m
  std::vector<stats::CompensatedSum> syy;  // group x m
};

std::uint32_t find_or_add(Partial& part, const std::string& key, std::size_t m) {
  auto it = part.index.find(key);
  if (it != part.index.end()) return it->second;
  const auto g = static_cast<std::uint32_t>(part.keys.size());
  part.index.emplace(key, g);
  part.keys.push_back(key);
  part.count.push_back(0);
  part.sy.resize(part.sy.size() + m);
  part.syy.resize(part.syy.size() + m);
  return g;
}

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw data_error("CorruptFile", "truncated compressed file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw data_error("CorruptFile", "truncated compressed file");
  return s;
}

}  // namespace

CompressedDataset compress(const EncodedTable& table, const ColumnLayout& layout,
                           const CompressOptions& options) {
  layout.check_compatible(table);
  const std::size_t m = table.n_kpis();
  const Column* cluster = options.by_cluster ? table.cluster_column() : nullptr;

  const auto ranges = parallel::chunks(table.n_rows());
  std::vector<Partial> parts(ranges.size());
  parallel::for_each(ranges.size(), [&](std::size_t c) {
    Partial& part = parts[c];
    std::vector<Entry> row;
    std::string key;
    for (std::size_t i = ranges[c].begin; i < ranges[c].end; ++i) {
      row.clear();
      layout.emit_row(table, i, row);
      key.clear();
      if (cluster) put_u32_be(key, cluster->codes[i]);
      for (const auto& e : row) {
        put_u32_be(key, e.col);
        put_u64_be(key, std::bit_cast<std::uint64_t>(e.value));
      }
      const std::uint32_t g = find_or_add(part, key, m);
      ++part.count[g];
      for (std::size_t j = 0; j < m; ++j) {
        const double y = table.kpi(j).values[i];
        part.sy[g * m + j].add(y);
        part.syy[g * m + j].add(y * y);
      }
    }
  });

  // Merge in chunk order, so sums are reproducible for any thread count.
  Partial all;
  for (auto& part : parts) {
    for (std::size_t g = 0; g < part.keys.size(); ++g) {
      const std::uint32_t t = find_or_add(all, part.keys[g], m);
      all.count[t] += part.count[g];
      for (std::size_t j = 0; j < m; ++j) {
        all.sy[t * m + j].merge(part.sy[g * m + j]);
        all.syy[t * m + j].merge(part.syy[g * m + j]);
      }
    }
    part = Partial{};
  }

  std::vector<std::uint32_t> order(all.keys.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return all.keys[a] < all.keys[b]; });

  CompressedDataset cd;
  cd.term_names = layout.names();
  cd.kpi_names = table.kpi_names();
  cd.n_total = table.n_rows();
  WeightedData& d = cd.data;
  d.m = m;
  d.design.n_rows = order.size();
  d.design.n_cols = layout.p();
  d.design.row_ptr.push_back(0);
  const std::size_t entry_offset = cluster ? 4 : 0;
  for (std::uint32_t g : order) {
    const std::string& key = all.keys[g];
    if (cluster) d.cluster.push_back(static_cast<std::uint32_t>(get_be(key, 0, 4)));
    for (std::size_t at = entry_offset; at < key.size(); at += 12) {
      d.design.col_idx.push_back(static_cast<std::uint32_t>(get_be(key, at, 4)));
      d.design.values.push_back(std::bit_cast<double>(get_be(key, at + 4, 8)));
    }
    d.design.row_ptr.push_back(d.design.values.size());
    d.weight.push_back(static_cast<double>(all.count[g]));
    for (std::size_t j = 0; j < m; ++j) {
      d.sum_y.push_back(all.sy[g * m + j].value());
      d.sum_y_sq.push_back(all.syy[g * m + j].value());
    }
  }
  if (cluster) d.n_clusters = cluster->levels.size();
  return cd;
}

double compression_ratio(const CompressedDataset& cd) {
  if (cd.groups() == 0) return 0.0;
  return static_cast<double>(cd.n_total) / static_cast<double>(cd.groups());
}

void write_compressed(const CompressedDataset& cd, std::ostream& out) {
  static_assert(std::endian::native == std::endian::little,
                "compressed file format is little-endian");
  const WeightedData& d = cd.data;
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, d.p());
  write_pod<std::uint64_t>(out, d.m);
  write_pod<std::uint64_t>(out, d.rows());
  write_pod<std::uint64_t>(out, cd.n_total);
  write_pod<std::uint8_t>(out, d.has_clusters() ? 1 : 0);
  write_pod<std::uint64_t>(out, d.n_clusters);
  for (const auto& name : cd.term_names) write_string(out, name);
  for (const auto& name : cd.kpi_names) write_string(out, name);
  for (std::size_t g = 0; g < d.rows(); ++g) {
    const std::size_t b0 = d.design.row_ptr[g], b1 = d.design.row_ptr[g + 1];
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(b1 - b0));
    for (std::size_t k = b0; k < b1; ++k) {
      write_pod<std::uint32_t>(out, d.design.col_idx[k]);
      write_pod<double>(out, d.design.values[k]);
    }
    write_pod<double>(out, d.weight[g]);
    for (std::size_t j = 0; j < d.m; ++j) write_pod<double>(out, d.sum_y[g * d.m + j]);
    for (std::size_t j = 0; j < d.m; ++j) write_pod<double>(out, d.sum_y_sq[g * d.m + j]);
    if (d.has_clusters()) write_pod<std::uint32_t>(out, d.cluster[g]);
  }
}

CompressedDataset read_compressed(std::istream& in) {
  static_assert(std::endian::native == std::endian::little,
                "compressed file format is little-endian");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw data_error("CorruptFile", "not a compressed dataset file");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw data_error("UnsupportedVersion", "unsupported compressed file version",
                     {{"version", std::to_string(version)}});
  }
  CompressedDataset cd;
  WeightedData& d = cd.data;
  d.design.n_cols = read_pod<std::uint64_t>(in);
  d.m = read_pod<std::uint64_t>(in);
  d.design.n_rows = read_pod<std::uint64_t>(in);
  cd.n_total = read_pod<std::uint64_t>(in);
  const bool clustered = read_pod<std::uint8_t>(in) != 0;
  d.n_clusters = read_pod<std::uint64_t>(in);
  for (std::size_t j = 0; j < d.design.n_cols; ++j) cd.term_names.push_back(read_string(in));
  for (std::size_t j = 0; j < d.m; ++j) cd.kpi_names.push_back(read_string(in));
  d.design.row_ptr.push_back(0);
  for (std::size_t g = 0; g < d.design.n_rows; ++g) {
    const auto nnz = read_pod<std::uint32_t>(in);
    for (std::uint32_t k = 0; k < nnz; ++k) {
      const auto col = read_pod<std::uint32_t>(in);
      if (col >= d.design.n_cols) throw data_error("CorruptFile", "column index out of range");
      d.design.col_idx.push_back(col);
      d.design.values.push_back(read_pod<double>(in));
    }
    d.design.row_ptr.push_back(d.design.values.size());
    d.weight.push_back(read_pod<double>(in));
    for (std::size_t j = 0; j < d.m; ++j) d.sum_y.push_back(read_pod<double>(in));
    for (std::size_t j = 0; j < d.m; ++j) d.sum_y_sq.push_back(read_pod<double>(in));
    if (clustered) d.cluster.push_back(read_pod<std::uint32_t>(in));
  }
  return cd;
}

}  // namespace cfx
