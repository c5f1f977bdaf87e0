#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "netfx/data.hpp"
#include "netfx/estimands.hpp"
#include "netfx/outcome.hpp"
#include "netfx/propensity.hpp"

namespace netfx {

/// Nuisance values needed by the estimating function for one cluster: the
/// (clipped) propensity of the observed assignment and the outcome
/// predictions for every assignment, indexed by TreatmentVector::code.
struct ClusterEvaluation {
  double e = 1.0;
  bool clipped = false;
  std::vector<Eigen::VectorXd> g;
};

struct EvalOptions {
  double propensity_floor = kDefaultPropensityFloor;
  unsigned threads = 1;
};

ClusterEvaluation evaluate_cluster(const ClusterObservation& c, const PropensityModel& e, const OutcomeModel& g,
                                   double floor = kDefaultPropensityFloor);

std::vector<ClusterEvaluation> evaluate_nuisances(const Dataset& data, const PropensityModel& e,
                                                  const OutcomeModel& g, const EvalOptions& opts = {});

/// phi_k = w'(A)(Y - g(A)) / e(A) + sum_a w'(a) g(a).
double phi_from_evaluation(const ClusterObservation& c, const ClusterEvaluation& ev, const EstimandSpec& spec);

double phi_k(const ClusterObservation& c, const PropensityModel& e, const OutcomeModel& g, const EstimandSpec& spec,
             double floor = kDefaultPropensityFloor, bool* clipped = nullptr);

/// Unit-average augmented outcome at own treatment `treat` under policy alpha:
/// (1/M) sum_j sum_{a: a_j = treat} [1(A = a)(Y_j - g_j(a)) / e + g_j(a)] pi(a_(-j); alpha).
double psi_k(const ClusterObservation& c, const ClusterEvaluation& ev, int treat, double alpha);

struct FoldAssignment {
  std::uint64_t seed = 0;
  std::vector<int> fold;  // per cluster index, 1 or 2
  std::map<std::string, int> by_id;

  std::vector<std::size_t> members(int f) const;
};

FoldAssignment cross_fit_split(const Dataset& data, std::uint64_t seed);

struct EstimateDiagnostics {
  std::size_t propensity_clipped = 0;
  std::size_t outcome_fallbacks = 0;
  std::vector<std::string> warnings;
  nlohmann::json nuisance = nlohmann::json::object();
  nlohmann::json folds;  // null unless cross-fitted
};

struct EstimateResult {
  std::string estimand;
  std::string method;
  double tau_hat = 0.0;
  std::map<int, double> theta_hat;
  TypeProportions p_hat;
  /// Mean squared influence function; se^2 = variance / n. NaN when unavailable.
  double variance = 0.0;
  double se = 0.0;
  std::pair<double, double> ci{0.0, 0.0};
  double level = 0.05;
  std::size_t n = 0;
  bool variance_available = true;
  Eigen::VectorXd phi;        // per cluster, phi of its own type
  Eigen::VectorXd influence;  // per cluster
  EstimateDiagnostics diagnostics;

  nlohmann::json to_json() const;
};

/// theta_k, tau and the influence-function variance from per-cluster phi.
EstimateResult assemble_estimate(const Dataset& data, const Eigen::VectorXd& phi, const EstimandSpec& spec,
                                 const TypeProportions& p, double level, std::string method);

/// Estimate for one spec from precomputed nuisance evaluations.
EstimateResult estimate_from_evaluations(const Dataset& data, const std::vector<ClusterEvaluation>& evals,
                                         const EstimandSpec& spec, const TypeProportions& p, double level,
                                         std::string method);

EstimateResult aipw_estimate(const Dataset& data, const PropensityModel& e, const OutcomeModel& g,
                             const EstimandSpec& spec, const TypeProportions& p, double level = 0.05,
                             const EvalOptions& opts = {});

struct NuisanceFitters {
  std::function<std::shared_ptr<const PropensityModel>(const Dataset&)> fit_e;
  std::function<std::shared_ptr<const OutcomeModel>(const Dataset&)> fit_g;
};

struct CrossfitEvaluation {
  FoldAssignment folds;
  std::vector<ClusterEvaluation> evals;
  nlohmann::json nuisance = nlohmann::json::object();
  std::size_t outcome_fallbacks = 0;
};

/// Fits nuisances on each fold's complement and evaluates them on the fold.
CrossfitEvaluation crossfit_evaluate(const Dataset& data, const NuisanceFitters& fitters, std::uint64_t seed,
                                     const EvalOptions& opts = {});

EstimateResult crossfit_estimate(const Dataset& data, const NuisanceFitters& fitters, const EstimandSpec& spec,
                                 const TypeProportions& p, double level, std::uint64_t seed,
                                 const EvalOptions& opts = {});

EstimateResult estimate_from_crossfit(const Dataset& data, const CrossfitEvaluation& cf, const EstimandSpec& spec,
                                      const TypeProportions& p, double level);

/// Mean squared deviation of psi-differences around their mean: the
/// simplified variance of the direct effect (DE) or indirect effect (IE).
double msd_variance_de(const Dataset& data, const std::vector<ClusterEvaluation>& evals,
                       const PolicyAllocation& alloc);
double msd_variance_ie(const Dataset& data, const std::vector<ClusterEvaluation>& evals,
                       const PolicyAllocation& alloc);

/// Inverse standard normal CDF.
double normal_quantile(double p);

/// tau -/+ z_{1 - level/2} se; throws when the variance is unavailable.
std::pair<double, double> confidence_interval(const EstimateResult& result, double level);

}  // namespace netfx
