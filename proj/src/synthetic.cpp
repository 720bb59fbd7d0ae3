#include "cfx/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "cfx/error.hpp"

namespace cfx {
namespace {

std::string padded(const std::string& prefix, std::size_t i, std::size_t count) {
  const int width = static_cast<int>(std::to_string(count > 0 ? count - 1 : 0).size());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, i);
  return prefix + buf;
}

Column categorical(std::string name, ColumnKind kind, std::vector<std::string> levels,
                   std::vector<std::uint32_t> codes) {
  Column c;
  c.name = std::move(name);
  c.kind = kind;
  c.levels = std::move(levels);
  c.codes = std::move(codes);
  return c;
}

std::vector<std::string> level_names(const std::string& prefix, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(padded(prefix, i, count));
  return out;
}

struct Profile {
  std::vector<std::uint32_t> seg;
  std::vector<double> x;
};

Profile draw_profile(const SyntheticConfig& cfg, std::mt19937_64& rng, bool discrete) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Profile p;
  for (std::size_t l : cfg.segment_levels) {
    p.seg.push_back(static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, l - 1)(rng)));
  }
  for (std::size_t j = 0; j < cfg.n_numeric; ++j) {
    const double v = normal(rng);
    p.x.push_back(discrete ? std::round(v * 4.0) / 4.0 : v);
  }
  return p;
}

}  // namespace

EncodedTable synthetic_table(const SyntheticConfig& cfg) {
  if (cfg.n_treatments < 2 || cfg.n_kpis == 0) {
    throw config_error("InvalidSynthetic", "need at least two treatment levels and one kpi");
  }
  for (std::size_t l : cfg.segment_levels) {
    if (l == 0) throw config_error("InvalidSynthetic", "segment columns need at least one level");
  }
  const std::size_t n = cfg.n;
  const std::size_t k = cfg.n_treatments;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Profile> profiles;
  for (std::size_t i = 0; i < cfg.n_profiles; ++i) {
    profiles.push_back(draw_profile(cfg, rng, true));
    // Cycle segment levels so every level has a profile once n_profiles >= levels.
    for (std::size_t s = 0; s < cfg.segment_levels.size(); ++s) {
      profiles.back().seg[s] = static_cast<std::uint32_t>(i % cfg.segment_levels[s]);
    }
  }

  std::vector<std::uint32_t> treatment(n), period(n), cluster(n), instrument(n);
  std::vector<std::vector<std::uint32_t>> seg(cfg.segment_levels.size(), std::vector<std::uint32_t>(n));
  std::vector<std::vector<double>> x(cfg.n_numeric, std::vector<double>(n));
  std::vector<std::vector<double>> y(cfg.n_kpis, std::vector<double>(n));

  std::uniform_int_distribution<std::size_t> pick_arm(0, k - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Profile p = profiles.empty()
                          ? draw_profile(cfg, rng, false)
                          : profiles[std::uniform_int_distribution<std::size_t>(0, profiles.size() - 1)(rng)];
    for (std::size_t s = 0; s < p.seg.size(); ++s) seg[s][i] = p.seg[s];
    for (std::size_t j = 0; j < p.x.size(); ++j) x[j][i] = p.x[j];

    double confounder = 0.0;
    std::size_t arm = pick_arm(rng);
    if (cfg.n_instrument_levels > 0) {
      instrument[i] = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, cfg.n_instrument_levels - 1)(rng));
      confounder = normal(rng);
      // Compliance depends on the confounder, which also moves y.
      if (unif(rng) < 0.5 + 0.2 * std::tanh(confounder)) arm = instrument[i] % k;
    }
    treatment[i] = static_cast<std::uint32_t>(arm);
    if (cfg.n_periods > 0) period[i] = static_cast<std::uint32_t>(i * cfg.n_periods / n);
    if (cfg.n_clusters > 0) cluster[i] = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, cfg.n_clusters - 1)(rng));

    double base = 1.0 + confounder;
    double lift = 0.25 * static_cast<double>(arm);
    for (std::size_t s = 0; s < p.seg.size(); ++s) {
      const double u = static_cast<double>(p.seg[s]) / static_cast<double>(cfg.segment_levels[s]);
      base += 0.5 * u;
      if (arm > 0) lift += 0.3 * u * static_cast<double>(s + 1);
    }
    for (std::size_t j = 0; j < p.x.size(); ++j) {
      base += 0.1 * static_cast<double>(j + 1) * p.x[j];
      if (arm > 0 && j == 0) lift += 0.2 * p.x[j];
    }
    if (cfg.n_periods > 0 && arm > 0) lift *= 1.0 + 0.1 * static_cast<double>(period[i]);
    for (std::size_t m = 0; m < cfg.n_kpis; ++m) {
      y[m][i] = base + static_cast<double>(m + 1) * lift + cfg.noise_sd * normal(rng);
    }
  }

  std::vector<Column> cols;
  std::vector<std::string> arms{"control"};
  for (std::size_t a = 1; a < k; ++a) arms.push_back(padded("t", a, k));
  cols.push_back(categorical("treatment", ColumnKind::treatment, arms, std::move(treatment)));
  for (std::size_t s = 0; s < seg.size(); ++s) {
    const std::string name = "seg" + std::to_string(s + 1);
    cols.push_back(categorical(name, ColumnKind::categorical, level_names(name + "_", cfg.segment_levels[s]), std::move(seg[s])));
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    Column c;
    c.name = "x" + std::to_string(j + 1);
    c.kind = ColumnKind::numeric;
    c.values = std::move(x[j]);
    cols.push_back(std::move(c));
  }
  if (cfg.n_periods > 0) {
    cols.push_back(categorical("period", ColumnKind::time_period, level_names("p", cfg.n_periods), std::move(period)));
  }
  if (cfg.n_clusters > 0) {
    cols.push_back(categorical("cluster", ColumnKind::cluster_id, level_names("c", cfg.n_clusters), std::move(cluster)));
  }
  if (cfg.n_instrument_levels > 0) {
    cols.push_back(categorical("z", ColumnKind::instrument, level_names("z", cfg.n_instrument_levels), std::move(instrument)));
  }
  for (std::size_t m = 0; m < cfg.n_kpis; ++m) {
    Column c;
    c.name = "y" + std::to_string(m + 1);
    c.kind = ColumnKind::kpi;
    c.values = std::move(y[m]);
    cols.push_back(std::move(c));
  }
  return EncodedTable::from_columns(std::move(cols));
}

DesignSpec synthetic_design(const SyntheticConfig& cfg, bool interactions) {
  DesignSpec spec;
  spec.treatment = "treatment";
  for (std::size_t s = 0; s < cfg.segment_levels.size(); ++s) spec.covariates.push_back("seg" + std::to_string(s + 1));
  for (std::size_t j = 0; j < cfg.n_numeric; ++j) spec.covariates.push_back("x" + std::to_string(j + 1));
  spec.interact_treatment_covariates = interactions;
  if (cfg.n_periods > 0) {
    spec.time = "period";
    spec.interact_treatment_time = interactions;
  }
  return spec;
}

}  // namespace cfx
