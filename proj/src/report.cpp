#include "cfx/report.hpp"

#include <cmath>

namespace cfx::report {
namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json Report::document() const {
  Json doc = Json::object();
  doc["results"] = results;
  doc["telemetry"] = telemetry;
  return doc;
}

std::string Report::dump() const { return document().dump(2) + "\n"; }

Json fit_json(const FitResult& fit, const std::vector<std::string>& kpi_names, CovKind cov_kind) {
  Json out = Json::object();
  out["cov_kind"] = std::string(to_string(cov_kind));
  out["n_obs"] = fit.n_obs;
  out["df_resid"] = fit.df_resid;
  out["p"] = fit.p();
  if (fit.ridge > 0.0) out["ridge"] = fit.ridge;
  Json kpis = Json::array();
  for (std::size_t j = 0; j < fit.m(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const Eigen::MatrixXd* v = fit.has_covariance(cov_kind, j) ? &fit.covariance(cov_kind, j) : nullptr;
    Json terms = Json::array();
    for (std::size_t i = 0; i < fit.p(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      Json t = Json::object();
      t["term"] = i < fit.term_names.size() ? fit.term_names[i] : std::to_string(i);
      t["estimate"] = number(fit.beta(ii, jj));
      if (v != nullptr) t["se"] = number(std::sqrt(std::max(0.0, (*v)(ii, ii))));
      terms.push_back(std::move(t));
    }
    Json k = Json::object();
    k["kpi"] = j < kpi_names.size() ? kpi_names[j] : std::to_string(j);
    k["sigma2"] = number(fit.sigma2(jj));
    k["rss"] = number(fit.rss(jj));
    k["coefficients"] = std::move(terms);
    kpis.push_back(std::move(k));
  }
  out["kpis"] = std::move(kpis);
  return out;
}

Json tsls_json(const TslsFit& fit, const std::vector<std::string>& kpi_names) {
  Json out = fit_json(fit.as_fit_result(), kpi_names, CovKind::homoskedastic);
  out["method"] = "2sls";
  out["first_stage_terms"] = fit.first_stage_terms;
  Json f = Json::array();
  for (double v : fit.first_stage_f) f.push_back(number(v));
  out["first_stage_F"] = std::move(f);
  out["warnings"] = fit.warnings;
  return out;
}

Json effect_json(const EffectEstimate& e) {
  Json out = Json::object();
  out["kpi"] = e.kpi;
  out["treatment"] = e.treatment;
  out["segment"] = e.segment;
  out["period"] = e.period ? Json(*e.period) : Json(nullptr);
  out["point"] = number(e.point);
  out["se"] = number(e.se);
  out["z"] = number(e.z);
  out["ci_lo"] = number(e.ci_lo);
  out["ci_hi"] = number(e.ci_hi);
  out["n"] = e.n_segment;
  out["cov_kind"] = std::string(to_string(e.cov_kind));
  return out;
}

Json policy_json(const PolicyEvalResult& r) {
  Json out = Json::object();
  out["kpi"] = r.kpi;
  out["policy"] = r.policy;
  out["baseline"] = r.baseline;
  out["statistic"] = number(r.statistic);
  out["se"] = number(r.se);
  out["z"] = number(r.z);
  out["p_value"] = number(r.p_value);
  out["n_users"] = r.n_users;
  out["method"] = std::string(to_string(r.method));
  return out;
}

Json distribution_json(const DistributionEstimate& d) {
  Json out = Json::object();
  out["point"] = number(d.point);
  out["se"] = number(d.se);
  out["ci"] = Json::array({number(d.ci_lo), number(d.ci_hi)});
  out["n"] = d.n;
  out["subset_size"] = d.subset_size;
  out["n_subsets"] = d.n_subsets;
  Json cfg = Json::object();
  cfg["gamma"] = d.config.gamma;
  cfg["resamples"] = d.config.resamples;
  cfg["seed"] = d.config.seed;
  cfg["ci_level"] = d.config.ci_level;
  cfg["aggregation"] = d.config.aggregation == BlbAggregation::mean ? "mean" : "median";
  out["config"] = std::move(cfg);
  Json subsets = Json::array();
  for (const auto& s : d.subsets) {
    Json j = Json::object();
    j["index"] = s.index;
    j["size"] = s.size;
    j["skipped"] = s.skipped;
    j["point"] = number(s.point);
    j["se"] = number(s.se);
    subsets.push_back(std::move(j));
  }
  out["subsets"] = std::move(subsets);
  out["warnings"] = d.warnings;
  return out;
}

Json compress_json(const CompressedDataset& cd) {
  Json out = Json::object();
  out["n_rows"] = cd.n_total;
  out["groups"] = cd.groups();
  out["ratio"] = number(compression_ratio(cd));
  out["p"] = cd.data.p();
  out["clustered"] = cd.data.has_clusters();
  return out;
}

Json phases_json(const std::vector<PhaseStat>& phases) {
  Json out = Json::array();
  for (const auto& p : phases) {
    Json j = Json::object();
    j["phase"] = p.name;
    j["seconds"] = p.seconds;
    j["peak_bytes"] = p.peak_bytes;
    out.push_back(std::move(j));
  }
  return out;
}

Json error_json(const Error& e) {
  Json ctx = Json::object();
  for (const auto& [k, v] : e.context()) ctx[k] = v;
  Json out = Json::object();
  out["code"] = e.code();
  out["message"] = e.what();
  out["context"] = std::move(ctx);
  return out;
}

}  // namespace cfx::report
