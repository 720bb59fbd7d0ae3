#include "cfx/tsls.hpp"

#include <cmath>
#include <limits>

#include "cfx/error.hpp"
#include "cfx/parallel.hpp"
#include "cfx/stats.hpp"
#include "gram_impl.hpp"

namespace cfx {
namespace {

// Streams design rows of `layout` straight from the columnar table.
struct TableSource {
  const EncodedTable& table;
  const ColumnLayout& layout;

  struct Scratch {
    std::vector<Entry> entries;
    std::vector<std::uint32_t> cols;
    std::vector<double> vals;
    std::vector<double> y;
    std::vector<double> yy;
  };

  detail::RowView row(std::size_t i, Scratch& s) const {
    s.entries.clear();
    layout.emit_row(table, i, s.entries);
    s.cols.resize(s.entries.size());
    s.vals.resize(s.entries.size());
    for (std::size_t k = 0; k < s.entries.size(); ++k) {
      s.cols[k] = s.entries[k].col;
      s.vals[k] = s.entries[k].value;
    }
    const std::size_t m = table.n_kpis();
    s.y.resize(m);
    s.yy.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      s.y[j] = table.kpi(j).values[i];
      s.yy[j] = s.y[j] * s.y[j];
    }
    return {s.cols.data(), s.vals.data(), s.cols.size(), 1.0, s.y.data(), s.yy.data(), 1.0, i};
  }
};

// Column positions inside the union design [1 | A | X | Z].
struct Blocks {
  std::vector<Eigen::Index> w;     // [1 | X | Z]
  std::vector<Eigen::Index> exo;   // [1 | X]
  std::vector<Eigen::Index> endo;  // A dummies
  std::size_t p = 0;               // second-stage width, K + |X| columns 0..p-1
};

Blocks blocks_of(const ColumnLayout& u) {
  Blocks b;
  for (std::size_t j = 0; j < u.p(); ++j) {
    const auto role = u.column(j).role;
    const auto idx = static_cast<Eigen::Index>(j);
    if (role == TermRole::treatment) {
      b.endo.push_back(idx);
    } else {
      b.w.push_back(idx);
      if (role != TermRole::instrument) b.exo.push_back(idx);
    }
    if (role != TermRole::instrument) b.p = j + 1;
  }
  return b;
}

Eigen::MatrixXd pick(const Eigen::MatrixXd& a, const std::vector<Eigen::Index>& rows,
                     const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(rows[i], cols[j]);
    }
  }
  return out;
}

std::vector<std::string> names_at(const std::vector<std::string>& names,
                                  const std::vector<Eigen::Index>& idx) {
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(names[static_cast<std::size_t>(i)]);
  return out;
}

Eigen::MatrixXd cholesky_solve(const Eigen::MatrixXd& l, const Eigen::MatrixXd& rhs) {
  const auto lower = l.triangularView<Eigen::Lower>();
  return lower.transpose().solve(lower.solve(rhs));
}

ColumnLayout union_layout(const EncodedTable& table, const TslsSpec& spec) {
  if (spec.instruments.empty()) {
    throw config_error("InvalidDesign", "two-stage least squares needs at least one instrument");
  }
  DesignSpec ds;
  ds.treatment = spec.treatment;
  ds.covariates = spec.covariates;
  ds.instruments = spec.instruments;
  return build_layout(ds, table);
}

ColumnLayout second_stage_layout(const EncodedTable& table, const TslsSpec& spec) {
  DesignSpec ds;
  ds.treatment = spec.treatment;
  ds.covariates = spec.covariates;
  return build_layout(ds, table);
}

// F statistic for the excluded instruments in the first-stage regression of
// one endogenous column. Inputs are Gram blocks.
double first_stage_f(double aa, const Eigen::VectorXd& wa, const Eigen::VectorXd& gamma_k,
                     const Eigen::MatrixXd& rr, const Eigen::VectorXd& ra, double n,
                     std::size_t q, std::size_t n_instruments) {
  const double rss_u_raw = aa - wa.dot(gamma_k);
  const double rss_r = aa - ra.dot(rr.ldlt().solve(ra));
  const double df = n - static_cast<double>(q);
  if (df <= 0.0 || n_instruments == 0) return 0.0;
  // A perfect first stage leaves no residual; floor it so F stays finite.
  const double rss_u = std::max(rss_u_raw, std::numeric_limits<double>::epsilon() * std::max(aa, 1.0));
  const double f = ((rss_r - rss_u) / static_cast<double>(n_instruments)) / (rss_u / df);
  return std::max(0.0, f);
}

}  // namespace

FitResult TslsFit::as_fit_result() const {
  FitResult f;
  f.beta = beta;
  f.xtwx_inv = mhat_gram_inv;
  f.rss = rss;
  f.sigma2 = sigma2;
  f.n_obs = n_obs;
  f.df_resid = df_resid;
  f.term_names = layout.names();
  for (std::size_t j = 0; j < cov_beta.size(); ++j) f.cov[{CovKind::homoskedastic, j}] = cov_beta[j];
  return f;
}

TslsFit fit_2sls(const EncodedTable& table, const TslsSpec& spec) {
  const ColumnLayout u = union_layout(table, spec);
  const Blocks b = blocks_of(u);
  const std::vector<std::string> names = u.names();
  const std::size_t m = table.n_kpis();
  const std::size_t n = table.n_rows();

  const GramSystem g = detail::accumulate(TableSource{table, u}, n, u.p(), m);

  TslsFit out;
  out.layout = second_stage_layout(table, spec);
  out.first_stage_terms = names_at(names, b.w);
  const Eigen::MatrixXd ww = pick(g.xtwx, b.w, b.w);
  const Eigen::MatrixXd wa = pick(g.xtwx, b.w, b.endo);
  Eigen::MatrixXd wy(static_cast<Eigen::Index>(b.w.size()), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < b.w.size(); ++i) wy.row(static_cast<Eigen::Index>(i)) = g.xtwy.row(b.w[i]);

  const Eigen::MatrixXd l_w = checked_cholesky(ww, 1e-12, out.first_stage_terms);
  out.gamma = cholesky_solve(l_w, wa);

  // First-stage strength per endogenous column.
  std::vector<Eigen::Index> exo_in_w;
  for (std::size_t i = 0; i < b.w.size(); ++i) {
    if (std::find(b.exo.begin(), b.exo.end(), b.w[i]) != b.exo.end()) exo_in_w.push_back(static_cast<Eigen::Index>(i));
  }
  const Eigen::MatrixXd rr = pick(ww, exo_in_w, exo_in_w);
  const std::size_t n_instr = b.w.size() - b.exo.size();
  for (std::size_t k = 0; k < b.endo.size(); ++k) {
    Eigen::VectorXd ra(static_cast<Eigen::Index>(exo_in_w.size()));
    for (std::size_t i = 0; i < exo_in_w.size(); ++i) ra(static_cast<Eigen::Index>(i)) = wa(exo_in_w[i], static_cast<Eigen::Index>(k));
    const double f = first_stage_f(g.xtwx(b.endo[k], b.endo[k]), wa.col(static_cast<Eigen::Index>(k)),
                                   out.gamma.col(static_cast<Eigen::Index>(k)), rr, ra,
                                   g.sum_weights, b.w.size(), n_instr);
    out.first_stage_f.push_back(f);
    if (f < kWeakInstrumentF) {
      out.warnings.push_back("WeakInstrumentWarning: first-stage F = " + std::to_string(f) +
                             " < 10 for " + names[static_cast<std::size_t>(b.endo[k])]);
    }
  }

  // Pi maps W coordinates onto the second-stage columns [1 | A | X].
  const auto p = static_cast<Eigen::Index>(b.p);
  Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(b.w.size()), p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto e = std::find(b.endo.begin(), b.endo.end(), j);
    if (e != b.endo.end()) {
      pi.col(j) = out.gamma.col(e - b.endo.begin());
    } else {
      const auto w = std::find(b.w.begin(), b.w.end(), j);
      pi(w - b.w.begin(), j) = 1.0;
    }
  }
  const Eigen::MatrixXd mhat_gram = pi.transpose() * ww * pi;
  const Eigen::MatrixXd mhat_y = pi.transpose() * wy;
  std::vector<std::string> m_names(names.begin(), names.begin() + p);
  const Eigen::MatrixXd l = checked_cholesky(mhat_gram, 1e-12, m_names);
  out.beta = cholesky_solve(l, mhat_y);
  const auto lower = l.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd l_inv = lower.solve(Eigen::MatrixXd::Identity(p, p));
  out.mhat_gram_inv = l_inv.transpose() * l_inv;

  // Residuals against the observed treatment, streamed again.
  const auto ranges = parallel::chunks(n);
  struct Part {
    std::vector<stats::CompensatedSum> rss;
    std::size_t nnz = 0;
  };
  std::vector<Part> parts(ranges.size());
  const TableSource source{table, u};
  parallel::for_each(ranges.size(), [&](std::size_t c) {
    TableSource::Scratch s;
    parts[c].rss.assign(m, {});
    for (std::size_t i = ranges[c].begin; i < ranges[c].end; ++i) {
      const detail::RowView v = source.row(i, s);
      parts[c].nnz += v.nnz;
      for (std::size_t j = 0; j < m; ++j) {
        double yhat = 0.0;
        for (std::size_t k = 0; k < v.nnz; ++k) {
          if (v.cols[k] < b.p) yhat += v.vals[k] * out.beta(v.cols[k], static_cast<Eigen::Index>(j));
        }
        const double e = v.sum_y[j] - yhat;
        parts[c].rss[j].add(e * e);
      }
    }
  });
  out.rss = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  std::size_t nnz = 0;
  if (!parts.empty()) {
    Part total = parallel::tree_reduce(std::move(parts), [](Part& a, Part& c) {
      for (std::size_t j = 0; j < a.rss.size(); ++j) a.rss[j].merge(c.rss[j]);
      a.nnz += c.nnz;
    });
    for (std::size_t j = 0; j < m; ++j) out.rss(static_cast<Eigen::Index>(j)) = total.rss[j].value();
    nnz = total.nnz;
  }
  out.sparse_input_bytes = nnz * (sizeof(double) + sizeof(std::uint32_t)) +
                           (n + 1) * sizeof(std::size_t) + n * m * sizeof(double);

  out.n_obs = g.sum_weights;
  out.df_resid = g.sum_weights - static_cast<double>(p);
  out.sigma2.resize(static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out.sigma2(jj) = out.df_resid > 0.0 ? out.rss(jj) / out.df_resid
                                        : std::numeric_limits<double>::quiet_NaN();
    out.cov_beta.push_back(out.sigma2(jj) * out.mhat_gram_inv);
  }
  return out;
}

TslsFit dense_2sls_oracle(const EncodedTable& table, const TslsSpec& spec) {
  const std::size_t n = table.n_rows();
  if (n > kDenseTslsMaxRows) {
    throw data_error("TooLargeForOracle", "dense 2SLS oracle is limited to small inputs",
                     {{"n", std::to_string(n)}});
  }
  const ColumnLayout u = union_layout(table, spec);
  const Blocks b = blocks_of(u);
  const auto names = u.names();
  const auto m = static_cast<Eigen::Index>(table.n_kpis());
  const auto rows = static_cast<Eigen::Index>(n);

  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(u.p()));
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < n; ++i) {
    entries.clear();
    u.emit_row(table, i, entries);
    for (const auto& e : entries) full(static_cast<Eigen::Index>(i), e.col) = e.value;
  }
  Eigen::MatrixXd y(rows, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) y(i, j) = table.kpi(static_cast<std::size_t>(j)).values[static_cast<std::size_t>(i)];
  }
  auto columns = [&](const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(rows, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = full.col(idx[j]);
    return out;
  };
  const Eigen::MatrixXd w = columns(b.w);
  const Eigen::MatrixXd a = columns(b.endo);
  const Eigen::MatrixXd x = columns(b.exo);

  TslsFit out;
  out.layout = second_stage_layout(table, spec);
  out.first_stage_terms = names_at(names, b.w);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_w(w);
  if (qr_w.rank() < w.cols()) throw RankDeficientError({}, out.first_stage_terms);
  out.gamma = qr_w.solve(a);
  const Eigen::MatrixXd a_hat = w * out.gamma;

  const auto p = static_cast<Eigen::Index>(b.p);
  Eigen::MatrixXd m_obs = full.leftCols(p);
  Eigen::MatrixXd m_hat = m_obs;
  for (std::size_t k = 0; k < b.endo.size(); ++k) m_hat.col(b.endo[k]) = a_hat.col(static_cast<Eigen::Index>(k));

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_m(m_hat);
  if (qr_m.rank() < p) {
    throw RankDeficientError({}, std::vector<std::string>(names.begin(), names.begin() + p));
  }
  out.beta = qr_m.solve(y);
  const Eigen::MatrixXd gram = m_hat.transpose() * m_hat;
  out.mhat_gram_inv = gram.ldlt().solve(Eigen::MatrixXd::Identity(p, p));

  const Eigen::MatrixXd resid = y - m_obs * out.beta;
  out.rss = resid.colwise().squaredNorm().transpose();
  out.n_obs = static_cast<double>(n);
  out.df_resid = out.n_obs - static_cast<double>(p);
  out.sigma2 = out.rss / out.df_resid;
  for (Eigen::Index j = 0; j < m; ++j) out.cov_beta.push_back(out.sigma2(j) * out.mhat_gram_inv);

  const std::size_t n_instr = b.w.size() - b.exo.size();
  const double df = out.n_obs - static_cast<double>(w.cols());
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const Eigen::VectorXd ak = a.col(k);
    const double rss_u = std::max((ak - w * out.gamma.col(k)).squaredNorm(),
                                  std::numeric_limits<double>::epsilon() * std::max(ak.squaredNorm(), 1.0));
    const Eigen::VectorXd delta = x.colPivHouseholderQr().solve(ak);
    const double rss_r = (ak - x * delta).squaredNorm();
    out.first_stage_f.push_back(df > 0 ? std::max(0.0, ((rss_r - rss_u) / static_cast<double>(n_instr)) / (rss_u / df)) : 0.0);
  }
  return out;
}

}  // namespace cfx
