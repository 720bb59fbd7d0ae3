#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "cfx/bench.hpp"
#include "cfx/blb.hpp"
#include "cfx/compress.hpp"
#include "cfx/effects.hpp"
#include "cfx/error.hpp"
#include "cfx/policy.hpp"
#include "cfx/solver.hpp"
#include "cfx/tsls.hpp"

namespace cfx::report {

using Json = nlohmann::ordered_json;

/// Output document: "results" is a pure function of input, config and seed;
/// "telemetry" holds timings and memory.
struct Report {
  Json results = Json::object();
  Json telemetry = Json::object();

  Json document() const;
  std::string dump() const;
};

Json fit_json(const FitResult& fit, const std::vector<std::string>& kpi_names, CovKind cov_kind);
Json tsls_json(const TslsFit& fit, const std::vector<std::string>& kpi_names);
Json effect_json(const EffectEstimate& e);
Json policy_json(const PolicyEvalResult& r);
Json distribution_json(const DistributionEstimate& d);
Json compress_json(const CompressedDataset& cd);
Json phases_json(const std::vector<PhaseStat>& phases);
Json error_json(const Error& e);

}  // namespace cfx::report
