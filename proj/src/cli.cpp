#include "cfx/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "cfx/bench.hpp"
#include "cfx/blb.hpp"
#include "cfx/compress.hpp"
#include "cfx/effects.hpp"
#include "cfx/error.hpp"
#include "cfx/ingest.hpp"
#include "cfx/memtrack.hpp"
#include "cfx/parallel.hpp"
#include "cfx/policy.hpp"
#include "cfx/report.hpp"
#include "cfx/solver.hpp"
#include "cfx/synthetic.hpp"
#include "cfx/tsls.hpp"

namespace cfx::cli {
namespace {

using report::Json;
using RawJson = nlohmann::json;

struct RunConfig {
  std::string input;
  Schema schema;
  DesignSpec design;
  CovKind cov_kind = CovKind::homoskedastic;
  std::string method = "ols";
  double ridge = 0.0;

  std::vector<std::string> effect_treatments;
  std::vector<std::string> segment_by;
  bool by_period = false;
  std::vector<std::string> effect_kpis;

  bool blb_enabled = false;
  BlbConfig blb;
  bool bootstrap_naive = false;
  std::string blb_treatment;
  Segment blb_segment;
  std::optional<std::string> blb_period;
  std::string blb_kpi;

  std::string policy = "greedy";
  std::string baseline = "control";
  std::string policy_method = "delta";
  std::string policy_kpi;
  std::string assignments_out;

  bool by_cluster = true;
  bool fit_on_compressed = false;
  std::string compressed_out;

  std::string scenario = "cates";
  SyntheticConfig synth;
  std::size_t naive_cates = kAllCates;
  bool dense_oracle = true;

  std::uint64_t seed = 0;
  std::string output;
  std::optional<unsigned> threads;
};

void check_keys(const RawJson& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw config_error("InvalidConfig", "'" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw config_error("UnknownConfigKey", "unknown key '" + key + "' in " + where,
                         {{"key", key}, {"section", where}});
    }
  }
}

template <class T>
void read(const RawJson& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

CovKind parse_cov(const std::string& text) {
  const auto k = parse_cov_kind(text);
  if (!k) throw config_error("InvalidConfig", "unknown covariance kind '" + text + "'", {{"cov_kind", text}});
  return *k;
}

BlbAggregation parse_aggregation(const std::string& text) {
  if (text == "mean") return BlbAggregation::mean;
  if (text == "median") return BlbAggregation::median;
  throw config_error("InvalidConfig", "aggregation must be 'mean' or 'median'", {{"aggregation", text}});
}

void parse_config(const RawJson& j, RunConfig& c) {
  check_keys(j, {"input", "schema", "design", "cov_kind", "method", "ridge", "effects", "blb", "policy",
                 "compress", "bench", "seed", "output", "threads"},
             "config");
  read(j, "input", c.input);
  read(j, "output", c.output);
  read(j, "method", c.method);
  read(j, "ridge", c.ridge);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
  if (j.contains("cov_kind")) c.cov_kind = parse_cov(j.at("cov_kind").get<std::string>());
  if (j.contains("schema")) {
    const RawJson& s = j.at("schema");
    if (!s.is_array()) throw config_error("InvalidConfig", "'schema' must be an array of {name, kind}");
    for (const auto& col : s) {
      check_keys(col, {"name", "kind"}, "schema");
      const std::string kind = col.at("kind").get<std::string>();
      const auto k = parse_column_kind(kind);
      if (!k) throw config_error("InvalidSchema", "unknown column kind '" + kind + "'", {{"kind", kind}});
      c.schema.columns.push_back({col.at("name").get<std::string>(), *k});
    }
  }
  if (j.contains("design")) {
    const RawJson& d = j.at("design");
    check_keys(d, {"treatment", "covariates", "interact_treatment_covariates",
                   "interact_treatment_time", "time", "instruments"},
               "design");
    read(d, "treatment", c.design.treatment);
    read(d, "covariates", c.design.covariates);
    read(d, "interact_treatment_covariates", c.design.interact_treatment_covariates);
    read(d, "interact_treatment_time", c.design.interact_treatment_time);
    read(d, "instruments", c.design.instruments);
    if (d.contains("time")) c.design.time = d.at("time").get<std::string>();
  }
  if (j.contains("effects")) {
    const RawJson& e = j.at("effects");
    check_keys(e, {"treatments", "segment_by", "by_period", "kpis"}, "effects");
    read(e, "treatments", c.effect_treatments);
    read(e, "segment_by", c.segment_by);
    read(e, "by_period", c.by_period);
    read(e, "kpis", c.effect_kpis);
  }
  if (j.contains("blb")) {
    const RawJson& b = j.at("blb");
    check_keys(b, {"enabled", "gamma", "resamples", "ci_level", "aggregation", "bootstrap_naive",
                   "treatment", "segment", "period", "kpi"},
               "blb");
    read(b, "enabled", c.blb_enabled);
    read(b, "gamma", c.blb.gamma);
    read(b, "resamples", c.blb.resamples);
    read(b, "ci_level", c.blb.ci_level);
    if (b.contains("aggregation")) c.blb.aggregation = parse_aggregation(b.at("aggregation").get<std::string>());
    read(b, "bootstrap_naive", c.bootstrap_naive);
    read(b, "treatment", c.blb_treatment);
    read(b, "kpi", c.blb_kpi);
    if (b.contains("period")) c.blb_period = b.at("period").get<std::string>();
    if (b.contains("segment")) {
      const RawJson& s = b.at("segment");
      if (s.is_string()) {
        c.blb_segment = Segment::parse(s.get<std::string>());
      } else {
        if (!s.is_object()) throw config_error("InvalidConfig", "'blb.segment' must map columns to levels");
        for (const auto& [col, lvl] : s.items()) c.blb_segment.predicates.emplace_back(col, lvl.get<std::string>());
      }
    }
  }
  if (j.contains("policy")) {
    const RawJson& p = j.at("policy");
    check_keys(p, {"policy", "baseline", "method", "kpi", "assignments_out"}, "policy");
    read(p, "policy", c.policy);
    read(p, "baseline", c.baseline);
    read(p, "method", c.policy_method);
    read(p, "kpi", c.policy_kpi);
    read(p, "assignments_out", c.assignments_out);
  }
  if (j.contains("compress")) {
    const RawJson& p = j.at("compress");
    check_keys(p, {"by_cluster", "use_for_fit", "output"}, "compress");
    read(p, "by_cluster", c.by_cluster);
    read(p, "use_for_fit", c.fit_on_compressed);
    read(p, "output", c.compressed_out);
  }
  if (j.contains("bench")) {
    const RawJson& b = j.at("bench");
    check_keys(b, {"scenario", "n", "n_treatments", "segment_levels", "n_numeric", "n_kpis",
                   "n_periods", "n_clusters", "n_profiles", "n_instrument_levels", "noise_sd",
                   "naive_cates", "dense_oracle"},
               "bench");
    read(b, "scenario", c.scenario);
    read(b, "n", c.synth.n);
    read(b, "n_treatments", c.synth.n_treatments);
    read(b, "segment_levels", c.synth.segment_levels);
    read(b, "n_numeric", c.synth.n_numeric);
    read(b, "n_kpis", c.synth.n_kpis);
    read(b, "n_periods", c.synth.n_periods);
    read(b, "n_clusters", c.synth.n_clusters);
    read(b, "n_profiles", c.synth.n_profiles);
    read(b, "n_instrument_levels", c.synth.n_instrument_levels);
    read(b, "noise_sd", c.synth.noise_sd);
    read(b, "naive_cates", c.naive_cates);
    read(b, "dense_oracle", c.dense_oracle);
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw config_error("FileNotFound", "cannot open config file", {{"path", path}});
  try {
    parse_config(RawJson::parse(in), c);
  } catch (const RawJson::exception& e) {
    throw config_error("InvalidConfig", e.what(), {{"path", path}});
  }
  return c;
}

// Flags given on the command line; each overrides the matching config key.
struct Flags {
  std::string config;
  std::string input, output, cov_kind, method, scenario, policy, baseline, policy_method;
  std::string assignments_out, compressed_out, aggregation, blb_treatment, blb_segment, blb_kpi;
  std::vector<std::string> instruments, segment_by, treatments, kpis;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  double gamma = 0.7;
  double ridge = 0.0;
  std::size_t resamples = 100, n = 0, naive_cates = 0;
  bool blb = false, bootstrap_naive = false, by_period = false, use_compressed = false;
  // Every subcommand registers its own option under a shared name; only the
  // parsed subcommand's copies can have a count.
  std::map<std::string, std::vector<CLI::Option*>> opts;

  void add(const std::string& name, CLI::Option* o) { opts[name].push_back(o); }
  bool given(const std::string& name) const {
    const auto it = opts.find(name);
    if (it == opts.end()) return false;
    for (const CLI::Option* o : it->second) {
      if (o->count() > 0) return true;
    }
    return false;
  }
};

void add_common(CLI::App* sub, Flags& f) {
  f.add("config", sub->add_option("--config", f.config, "JSON run configuration"));
  f.add("input", sub->add_option("--input", f.input, "input CSV"));
  f.add("output", sub->add_option("--output", f.output, "write the JSON report here instead of stdout"));
  f.add("threads", sub->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber));
  f.add("seed", sub->add_option("--seed", f.seed, "random seed"));
}

void add_model(CLI::App* sub, Flags& f) {
  f.add("cov-kind", sub->add_option("--cov-kind", f.cov_kind, "homoskedastic, HC0, HC1 or clustered"));
  f.add("method", sub->add_option("--method", f.method, "ols or 2sls"));
  f.add("instruments", sub->add_option("--instruments", f.instruments, "instrument columns (2sls)"));
  f.add("ridge", sub->add_option("--ridge", f.ridge, "add ridge * I to X'WX (off by default)")->check(CLI::NonNegativeNumber));
  f.add("use-compressed", sub->add_flag("--use-compressed", f.use_compressed, "fit on compressed data"));
}

void add_blb(CLI::App* sub, Flags& f) {
  f.add("blb", sub->add_flag("--blb", f.blb, "bag of little bootstraps uncertainty"));
  f.add("gamma", sub->add_option("--gamma", f.gamma, "subset size exponent"));
  f.add("resamples", sub->add_option("--resamples", f.resamples, "resamples per subset"));
  f.add("aggregation", sub->add_option("--aggregation", f.aggregation, "mean or median"));
}

void apply_flags(const Flags& f, RunConfig& c) {
  if (f.given("input")) c.input = f.input;
  if (f.given("output")) c.output = f.output;
  if (f.given("threads")) c.threads = f.threads;
  if (f.given("seed")) c.seed = f.seed;
  if (f.given("cov-kind")) c.cov_kind = parse_cov(f.cov_kind);
  if (f.given("method")) c.method = f.method;
  if (f.given("ridge")) c.ridge = f.ridge;
  if (f.given("instruments")) c.design.instruments = f.instruments;
  if (f.given("use-compressed")) c.fit_on_compressed = f.use_compressed;
  if (f.given("segment-by")) c.segment_by = f.segment_by;
  if (f.given("treatments")) c.effect_treatments = f.treatments;
  if (f.given("kpis")) c.effect_kpis = f.kpis;
  if (f.given("by-period")) c.by_period = f.by_period;
  if (f.given("blb")) {
    c.blb_enabled = f.blb;
    if (f.blb) c.policy_method = "blb";
  }
  if (f.given("gamma")) c.blb.gamma = f.gamma;
  if (f.given("resamples")) c.blb.resamples = f.resamples;
  if (f.given("aggregation")) c.blb.aggregation = parse_aggregation(f.aggregation);
  if (f.given("bootstrap-naive")) c.bootstrap_naive = f.bootstrap_naive;
  if (f.given("treatment")) c.blb_treatment = f.blb_treatment;
  if (f.given("segment")) c.blb_segment = Segment::parse(f.blb_segment);
  if (f.given("kpi")) {
    c.blb_kpi = f.blb_kpi;
    c.policy_kpi = f.blb_kpi;
  }
  if (f.given("policy")) c.policy = f.policy;
  if (f.given("baseline")) c.baseline = f.baseline;
  if (f.given("policy-method")) c.policy_method = f.policy_method;
  if (f.given("assignments-out")) c.assignments_out = f.assignments_out;
  if (f.given("compressed-out")) c.compressed_out = f.compressed_out;
  if (f.given("scenario")) c.scenario = f.scenario;
  if (f.given("n")) c.synth.n = f.n;
  if (f.given("naive-cates")) c.naive_cates = f.naive_cates;
  c.blb.seed = c.seed;
  c.synth.seed = c.seed;
}

// ---------------------------------------------------------------------------

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Telemetry {
  std::vector<PhaseStat> phases;

  template <class F>
  auto phase(std::string name, F&& body) {
    memtrack::Scope scope;
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      phases.push_back({std::move(name), seconds_since(t0), scope.peak_delta()});
    } else {
      auto r = body();
      phases.push_back({std::move(name), seconds_since(t0), scope.peak_delta()});
      return r;
    }
  }

  Json json() const {
    Json t = Json::object();
    t["threads"] = parallel::threads();
    t["memtrack_active"] = memtrack::active();
    t["phases"] = report::phases_json(phases);
    return t;
  }
};

EncodedTable load_input(const RunConfig& c) {
  if (c.input.empty()) throw config_error("MissingConfig", "no input file given", {{"key", "input"}});
  if (c.schema.columns.empty()) throw config_error("MissingConfig", "no schema given", {{"key", "schema"}});
  return load_table(c.input, c.schema);
}

DesignSpec design_for(const RunConfig& c, const EncodedTable& table, bool with_instruments) {
  DesignSpec d = c.design;
  if (d.treatment.empty()) d.treatment = table.treatment().name;
  if (!with_instruments) d.instruments.clear();
  return d;
}

std::size_t kpi_index(const EncodedTable& table, const std::string& name) {
  if (name.empty()) return 0;
  const auto names = table.kpi_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw config_error("UnknownKpi", "unknown kpi '" + name + "'", {{"kpi", name}});
  return static_cast<std::size_t>(it - names.begin());
}

std::uint32_t level_index(const ColumnLayout& layout, const std::string& name) {
  const auto& levels = layout.treatment_levels();
  const auto it = std::find(levels.begin(), levels.end(), name);
  if (it == levels.end()) {
    throw config_error("UnknownLevel", "unknown treatment level '" + name + "'", {{"level", name}});
  }
  return static_cast<std::uint32_t>(it - levels.begin());
}

std::optional<std::uint32_t> period_index(const ColumnLayout& layout, const std::optional<std::string>& name) {
  if (!name) return std::nullopt;
  const auto& levels = layout.period_levels();
  const auto it = std::find(levels.begin(), levels.end(), *name);
  if (it == levels.end()) {
    throw config_error("UnknownLevel", "unknown period '" + *name + "'", {{"period", *name}});
  }
  return static_cast<std::uint32_t>(it - levels.begin());
}

struct Model {
  ColumnLayout layout;
  SparseDesignMatrix m;
  WeightedData data;  // raw rows, table order
  FitResult fit;
  std::optional<TslsFit> tsls;
  std::optional<CompressedDataset> compressed;
};

Model fit_model(const RunConfig& c, const EncodedTable& table, Telemetry& tel) {
  Model md;
  if (c.ridge < 0.0) throw config_error("InvalidConfig", "ridge must be nonnegative");
  if (c.method == "2sls") {
    if (c.ridge > 0.0) throw config_error("InvalidConfig", "ridge is not available for 2sls");
    if (c.cov_kind != CovKind::homoskedastic) {
      throw config_error("CovKindUnavailable", "2sls reports the homoskedastic covariance only",
                         {{"cov_kind", std::string(to_string(c.cov_kind))}});
    }
    const DesignSpec d = design_for(c, table, true);
    const TslsSpec spec{d.treatment, d.instruments, d.covariates};
    md.tsls = tel.phase("fit_2sls", [&] { return fit_2sls(table, spec); });
    md.layout = md.tsls->layout;
    md.fit = md.tsls->as_fit_result();
    md.m = tel.phase("design", [&] { return build_design(table, md.layout); });
    md.data = raw_data(to_csr(md.m), table);
    return md;
  }
  if (c.method != "ols") throw config_error("InvalidConfig", "method must be 'ols' or '2sls'", {{"method", c.method}});
  md.layout = tel.phase("layout", [&] { return build_layout(design_for(c, table, false), table); });
  md.m = tel.phase("design", [&] { return build_design(table, md.layout); });
  md.data = raw_data(to_csr(md.m), table);
  FitOptions opts;
  opts.term_names = md.layout.names();
  opts.ridge = c.ridge;
  if (c.fit_on_compressed) {
    md.compressed = tel.phase("compress", [&] { return compress(table, md.layout, {c.by_cluster}); });
    md.fit = tel.phase("fit", [&] { return fit(md.compressed->data, opts); });
    if (c.cov_kind != CovKind::homoskedastic) {
      tel.phase("covariance", [&] { add_covariance(md.fit, c.cov_kind, md.compressed->data); });
    }
  } else {
    md.fit = tel.phase("fit", [&] { return fit(md.data, opts); });
    if (c.cov_kind != CovKind::homoskedastic) {
      tel.phase("covariance", [&] { add_covariance(md.fit, c.cov_kind, md.data); });
    }
  }
  return md;
}

Json data_json(const EncodedTable& table) {
  const SummaryReport s = summarize(table);
  Json out = Json::object();
  out["n_rows"] = s.n_rows;
  Json cols = Json::array();
  for (const auto& c : s.columns) {
    Json j = Json::object();
    j["name"] = c.name;
    j["kind"] = std::string(to_string(c.kind));
    j["count"] = c.count;
    j["cardinality"] = c.cardinality ? Json(*c.cardinality) : Json(nullptr);
    j["mean"] = c.mean ? Json(*c.mean) : Json(nullptr);
    cols.push_back(std::move(j));
  }
  out["columns"] = std::move(cols);
  return out;
}

report::Report cmd_fit(const RunConfig& c) {
  Telemetry tel;
  const EncodedTable table = tel.phase("ingest", [&] { return load_input(c); });
  const Model md = fit_model(c, table, tel);
  report::Report r;
  r.results["command"] = "fit";
  r.results["data"] = data_json(table);
  if (md.tsls) {
    r.results["fit"] = report::tsls_json(*md.tsls, table.kpi_names());
  } else {
    r.results["fit"] = report::fit_json(md.fit, table.kpi_names(), c.cov_kind);
    r.results["fit"]["method"] = "ols";
    if (md.compressed) r.results["fit"]["compressed_groups"] = md.compressed->groups();
  }
  r.telemetry = tel.json();
  return r;
}

Statistic blb_effect(const Model& md, const EncodedTable& table,
                     std::uint32_t level, const Segment& segment,
                     std::optional<std::uint32_t> period, std::size_t kpi) {
  if (md.tsls) throw config_error("BlbUnsupported", "bootstrap intervals are available for ols fits only");
  return effect_statistic(md.data, md.layout, table, level, segment, period, kpi);
}

report::Report cmd_effects(const RunConfig& c) {
  Telemetry tel;
  const EncodedTable table = tel.phase("ingest", [&] { return load_input(c); });
  const Model md = fit_model(c, table, tel);
  SweepRequest req;
  for (const auto& t : c.effect_treatments) req.treatments.push_back(level_index(md.layout, t));
  for (const auto& k : c.effect_kpis) req.kpis.push_back(kpi_index(table, k));
  req.segment_by = c.segment_by;
  req.by_period = c.by_period;
  req.cov_kind = c.cov_kind;
  const auto est = tel.phase("effects", [&] { return effect_sweep(md.fit, md.layout, md.m, table, req); });

  report::Report r;
  r.results["command"] = "effects";
  Json arr = Json::array();
  for (const auto& e : est) arr.push_back(report::effect_json(e));
  if (c.blb_enabled) {
    tel.phase("blb", [&] {
      for (std::size_t i = 0; i < est.size(); ++i) {
        const auto& e = est[i];
        const Statistic s = blb_effect(md, table, e.treatment_level, Segment::parse(e.segment),
                                       period_index(md.layout, e.period), kpi_index(table, e.kpi));
        arr[i]["blb"] = report::distribution_json(blb_estimate(s, table.n_rows(), c.blb));
      }
    });
  }
  r.results["effects"] = std::move(arr);
  r.telemetry = tel.json();
  return r;
}

report::Report cmd_blb(const RunConfig& c) {
  Telemetry tel;
  const EncodedTable table = tel.phase("ingest", [&] { return load_input(c); });
  const Model md = fit_model(c, table, tel);
  const std::uint32_t level = c.blb_treatment.empty() ? 1 : level_index(md.layout, c.blb_treatment);
  const std::size_t kpi = kpi_index(table, c.blb_kpi);
  const auto period = period_index(md.layout, c.blb_period);
  const Statistic s = blb_effect(md, table, level, c.blb_segment, period, kpi);
  const DistributionEstimate d = tel.phase("blb", [&] {
    return c.bootstrap_naive ? naive_bootstrap(s, table.n_rows(), c.blb)
                             : blb_estimate(s, table.n_rows(), c.blb);
  });
  report::Report r;
  r.results["command"] = "blb";
  Json eff = Json::object();
  eff["kpi"] = table.kpi(kpi).name;
  eff["treatment"] = md.layout.treatment_levels().at(level);
  eff["segment"] = c.blb_segment.descriptor();
  eff["period"] = c.blb_period ? Json(*c.blb_period) : Json(nullptr);
  eff["method"] = c.bootstrap_naive ? "bootstrap" : "blb";
  r.results["effect"] = std::move(eff);
  r.results["distribution"] = report::distribution_json(d);
  r.telemetry = tel.json();
  return r;
}

PolicyAssignment make_policy(const std::string& spec, const ColumnLayout& layout,
                             const EffectsMatrix& effects) {
  if (spec == "greedy") return greedy_policy(effects);
  const auto& levels = layout.treatment_levels();
  if (std::find(levels.begin(), levels.end(), spec) != levels.end()) {
    return constant_policy(effects.n_users, level_index(layout, spec), spec);
  }
  if (spec == "control") return constant_policy(effects.n_users, 0, levels[0]);
  throw config_error("InvalidConfig", "policy must be 'greedy', 'control' or a treatment level",
                     {{"policy", spec}});
}

report::Report cmd_policy(const RunConfig& c) {
  Telemetry tel;
  const EncodedTable table = tel.phase("ingest", [&] { return load_input(c); });
  Model md = fit_model(c, table, tel);
  const std::size_t kpi = kpi_index(table, c.policy_kpi);
  const EligibilityMask mask = eligibility_from_table(table, md.layout);
  const EffectsMatrix fx = tel.phase("individual_effects", [&] { return individual_effects(md.fit, md.layout, table, mask, kpi); });
  const PolicyAssignment pi = make_policy(c.policy, md.layout, fx);
  const PolicyAssignment pi0 = make_policy(c.baseline, md.layout, fx);
  for (std::size_t j = 0; j < pi.action.size(); ++j) {
    if (!mask(j, pi.action[j]) || !mask(j, pi0.action[j])) {
      throw data_error("IneligibleAction", "policy assigns an ineligible action",
                       {{"row", std::to_string(j + 1)}});
    }
  }
  PolicyEvalResult res;
  if (c.policy_method == "delta") {
    res = tel.phase("evaluate", [&] { return evaluate_policy(md.fit, c.cov_kind, md.layout, table, pi, pi0, kpi); });
  } else if (c.policy_method == "blb") {
    if (md.tsls) throw config_error("BlbUnsupported", "bootstrap evaluation is available for ols fits only");
    res = tel.phase("evaluate", [&] { return evaluate_policy_blb(md.data, md.layout, table, pi, pi0, c.blb, kpi); });
  } else {
    throw config_error("InvalidConfig", "policy method must be 'delta' or 'blb'", {{"method", c.policy_method}});
  }
  if (!c.assignments_out.empty()) {
    std::ofstream out(c.assignments_out);
    if (!out) throw config_error("FileNotWritable", "cannot write assignments", {{"path", c.assignments_out}});
    write_assignment_csv(out, table, md.layout, pi);
  }
  report::Report r;
  r.results["command"] = "policy-eval";
  r.results["policy"] = report::policy_json(res);
  Json counts = Json::object();
  std::vector<std::size_t> n_by(md.layout.n_treatment_levels(), 0);
  for (auto a : pi.action) ++n_by[a];
  for (std::size_t k = 0; k < n_by.size(); ++k) counts[md.layout.treatment_levels()[k]] = n_by[k];
  r.results["assignment_counts"] = std::move(counts);
  r.telemetry = tel.json();
  return r;
}

report::Report cmd_compress(const RunConfig& c) {
  Telemetry tel;
  const EncodedTable table = tel.phase("ingest", [&] { return load_input(c); });
  const ColumnLayout layout = build_layout(design_for(c, table, false), table);
  const CompressedDataset cd = tel.phase("compress", [&] { return compress(table, layout, {c.by_cluster}); });
  if (!c.compressed_out.empty()) {
    std::ofstream out(c.compressed_out, std::ios::binary);
    if (!out) throw config_error("FileNotWritable", "cannot write compressed file", {{"path", c.compressed_out}});
    write_compressed(cd, out);
  }
  report::Report r;
  r.results["command"] = "compress";
  r.results["compress"] = report::compress_json(cd);
  r.telemetry = tel.json();
  return r;
}

Json doubles(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? Json(x) : Json(nullptr));
  return a;
}

report::Report cmd_bench(const RunConfig& c) {
  report::Report r;
  r.results["command"] = "bench";
  r.results["scenario"] = c.scenario;
  r.telemetry = Telemetry{}.json();
  const bool all = c.scenario == "all";
  bool known = all;
  if (all || c.scenario == "cates") {
    known = true;
    const CateBench b = bench_cates(c.synth, c.naive_cates);
    Json res = Json::object();
    res["n"] = b.n;
    res["p"] = b.p;
    res["n_cates"] = b.n_cates;
    res["naive_cates_run"] = b.naive_cates_run;
    res["max_rel_diff"] = b.max_rel_diff;
    res["estimates"] = doubles(b.estimates);
    r.results["cates"] = std::move(res);
    Json tel = Json::object();
    tel["phases"] = report::phases_json(b.phases);
    tel["contrast_total_seconds"] = b.contrast_total_seconds;
    tel["contrast_effects_seconds"] = b.contrast_effects_seconds;
    tel["naive_effects_seconds"] = b.naive_effects_seconds;
    tel["naive_extrapolated"] = b.naive_extrapolated;
    tel["speedup"] = b.speedup;
    r.telemetry["cates"] = std::move(tel);
  }
  if (all || c.scenario == "compression") {
    known = true;
    SyntheticConfig s = c.synth;
    // Few distinct design rows need a narrow design to stay identified.
    if (s.n_profiles == 0) {
      s.n_profiles = 40;
      s.segment_levels = {10};
      s.n_numeric = 2;
    }
    const CompressionBench b = bench_compression(s);
    Json res = Json::object();
    res["n"] = b.n;
    res["p"] = b.p;
    res["groups"] = b.groups;
    res["ratio"] = b.ratio;
    res["max_rel_diff"] = b.max_rel_diff;
    res["beta"] = doubles(b.beta);
    r.results["compression"] = std::move(res);
    Json tel = Json::object();
    tel["phases"] = report::phases_json(b.phases);
    tel["speedup"] = b.speedup;
    r.telemetry["compression"] = std::move(tel);
  }
  if (all || c.scenario == "tsls") {
    known = true;
    SyntheticConfig s = c.synth;
    if (s.n_instrument_levels == 0) {
      s.n_instrument_levels = 8;
      s.segment_levels = {10};
      s.n_numeric = 2;
    }
    const TslsBench b = bench_tsls(s, c.dense_oracle);
    Json res = Json::object();
    res["n"] = b.n;
    res["p"] = b.p;
    res["n_treatments"] = b.n_treatments;
    res["sparse_input_bytes"] = b.sparse_input_bytes;
    res["dense_fitted_bytes"] = b.dense_fitted_bytes;
    res["beta"] = doubles(b.beta);
    res["first_stage_F"] = doubles(b.first_stage_f);
    r.results["tsls"] = std::move(res);
    Json tel = Json::object();
    tel["seconds"] = b.seconds;
    tel["peak_bytes"] = b.peak_bytes;
    tel["oracle_n"] = b.oracle_n;
    tel["oracle_peak_bytes"] = b.oracle_peak_bytes;
    tel["oracle_sparse_input_bytes"] = b.oracle_sparse_input_bytes;
    r.telemetry["tsls"] = std::move(tel);
  }
  if (!known) {
    throw config_error("InvalidConfig", "scenario must be cates, compression, tsls or all",
                       {{"scenario", c.scenario}});
  }
  return r;
}

void emit(const report::Report& r, const RunConfig& c, std::ostream& out) {
  if (c.output.empty()) {
    out << r.dump();
    return;
  }
  std::ofstream f(c.output);
  if (!f) throw config_error("FileNotWritable", "cannot write report", {{"path", c.output}});
  f << r.dump();
}

void print_error(std::ostream& err, const Error& e) { err << report::error_json(e).dump() << "\n"; }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Treatment effect estimation on experiment data", "cfx"};
  app.require_subcommand(1);
  Flags f;

  auto* fit_cmd = app.add_subcommand("fit", "fit the model and report coefficients");
  add_common(fit_cmd, f);
  add_model(fit_cmd, f);

  auto* eff_cmd = app.add_subcommand("effects", "ATE, CATE and time-dynamic effects");
  add_common(eff_cmd, f);
  add_model(eff_cmd, f);
  add_blb(eff_cmd, f);
  f.add("segment-by", eff_cmd->add_option("--segment-by", f.segment_by, "categorical covariates to partition by"));
  f.add("treatments", eff_cmd->add_option("--treatments", f.treatments, "treatment levels"));
  f.add("kpis", eff_cmd->add_option("--kpis", f.kpis, "kpi columns"));
  f.add("by-period", eff_cmd->add_flag("--by-period", f.by_period, "one effect per period"));

  auto* comp_cmd = app.add_subcommand("compress", "group identical design rows");
  add_common(comp_cmd, f);
  f.add("compressed-out", comp_cmd->add_option("--compressed-out", f.compressed_out, "binary output file"));

  auto* pol_cmd = app.add_subcommand("policy-eval", "greedy policy versus a baseline");
  add_common(pol_cmd, f);
  add_model(pol_cmd, f);
  add_blb(pol_cmd, f);
  f.add("policy", pol_cmd->add_option("--policy", f.policy, "greedy, control or a treatment level"));
  f.add("baseline", pol_cmd->add_option("--baseline", f.baseline, "control or a treatment level"));
  f.add("kpi", pol_cmd->add_option("--kpi", f.blb_kpi, "kpi column"));
  f.add("assignments-out", pol_cmd->add_option("--assignments-out", f.assignments_out, "CSV of unit_id,action"));

  auto* blb_cmd = app.add_subcommand("blb", "bootstrap distribution of one effect");
  add_common(blb_cmd, f);
  add_model(blb_cmd, f);
  add_blb(blb_cmd, f);
  f.add("treatment", blb_cmd->add_option("--treatment", f.blb_treatment, "treatment level"));
  f.add("segment", blb_cmd->add_option("--segment", f.blb_segment, "column=level[&column=level]"));
  f.add("bootstrap-naive", blb_cmd->add_flag("--bootstrap-naive", f.bootstrap_naive, "full bootstrap (small n only)"));
  f.add("kpi", blb_cmd->add_option("--kpi", f.blb_kpi, "kpi column"));

  auto* bench_cmd = app.add_subcommand("bench", "synthetic benchmarks");
  add_common(bench_cmd, f);
  f.add("scenario", bench_cmd->add_option("--scenario", f.scenario, "cates, compression, tsls or all"));
  f.add("n", bench_cmd->add_option("--n", f.n, "rows"));
  f.add("naive-cates", bench_cmd->add_option("--naive-cates", f.naive_cates, "CATEs to run on the naive path"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, config_error("InvalidArguments", e.what()));
    return static_cast<int>(ErrorCategory::config);
  }

  try {
    RunConfig c = load_config(f.config);
    apply_flags(f, c);
    if (c.threads) parallel::set_threads(*c.threads);
    c.blb.validate();
    report::Report r;
    if (fit_cmd->parsed()) r = cmd_fit(c);
    else if (eff_cmd->parsed()) r = cmd_effects(c);
    else if (comp_cmd->parsed()) r = cmd_compress(c);
    else if (pol_cmd->parsed()) r = cmd_policy(c);
    else if (blb_cmd->parsed()) r = cmd_blb(c);
    else r = cmd_bench(c);
    emit(r, c, out);
    return 0;
  } catch (const Error& e) {
    print_error(err, e);
    return e.exit_code();
  } catch (const RawJson::exception& e) {
    print_error(err, config_error("InvalidConfig", e.what()));
    return static_cast<int>(ErrorCategory::config);
  } catch (const std::bad_alloc&) {
    print_error(err, numeric_error("OutOfMemory", "allocation failed"));
    return static_cast<int>(ErrorCategory::numeric);
  } catch (const std::exception& e) {
    print_error(err, numeric_error("InternalError", e.what()));
    return static_cast<int>(ErrorCategory::numeric);
  }
}

}  // namespace cfx::cli
