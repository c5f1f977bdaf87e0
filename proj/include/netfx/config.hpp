#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "netfx/data.hpp"
#include "netfx/estimands.hpp"
#include "netfx/estimators.hpp"
#include "netfx/outcome.hpp"
#include "netfx/propensity.hpp"

namespace netfx {

struct EstimandConfig {
  std::string kind = "DE";  // DE, IE or generic
  PolicyAllocation alloc;
  nlohmann::json weights;  // generic: {"k": {"bits": [w_1, ..., w_M]}}
};

struct PropensityConfig {
  std::string kind = "known";  // known or logistic_mixed
  std::map<int, double> prob;
  std::optional<double> prob_default;
  std::size_t quad_nodes = 30;
  bool adaptive = true;
  bool pool_types = false;
  nlohmann::json own;   // column names or indices; null = all
  nlohmann::json peer;
};

struct OutcomeConfig {
  std::string kind = "linear_mixed";  // linear_mixed, kernel or zero
  double bandwidth_scale = 1.0;
  bool symmetrize_peers = false;
  nlohmann::json continuous;
  std::optional<double> h_c;
  std::optional<double> h_d;
  bool peer_treatment = true;
  nlohmann::json interactions;
  nlohmann::json own;
  nlohmann::json peer;
  bool pool_types = false;
};

struct EstimatorConfig {
  std::string kind = "aipw";  // aipw, crossfit or ipw
  std::uint64_t seed = 1;
  bool p_known = false;
  std::map<int, double> p;
};

struct RunConfig {
  EstimandConfig estimand;
  PropensityConfig propensity;
  OutcomeConfig outcome;
  EstimatorConfig estimator;
  double level = 0.05;
  double propensity_floor = kDefaultPropensityFloor;
  std::string output;

  /// Throws ConfigError naming any referenced type that the data lacks, or
  /// any data type without an allocation.
  void validate_for(const Dataset& data) const;
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

PolicyAllocation parse_allocation(const nlohmann::json& alpha, const nlohmann::json& alpha_prime);
EstimandSpec make_estimand(const EstimandConfig& cfg);
TypeProportions make_proportions(const RunConfig& cfg, const Dataset& data);
NuisanceFitters make_fitters(const RunConfig& cfg);

/// Nuisances fitted and evaluated once; estimands can then be evaluated
/// cheaply (as in a policy sweep).
struct PreparedRun {
  std::string method;
  std::vector<ClusterEvaluation> evals;
  nlohmann::json nuisance;
  nlohmann::json folds;
  std::size_t outcome_fallbacks = 0;
  TypeProportions p;
  double level = 0.05;
};

PreparedRun prepare_run(const RunConfig& cfg, const Dataset& data, unsigned threads = 1);
EstimateResult estimate_prepared(const PreparedRun& run, const Dataset& data, const EstimandSpec& spec);
EstimateResult run_estimate(const RunConfig& cfg, const Dataset& data, unsigned threads = 1);

}  // namespace netfx
