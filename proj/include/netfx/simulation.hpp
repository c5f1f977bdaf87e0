#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netfx/data.hpp"
#include "netfx/estimands.hpp"
#include "netfx/estimators.hpp"
#include "netfx/outcome.hpp"
#include "netfx/propensity.hpp"

namespace netfx {

/// Two cluster types (sizes 3 and 4) with covariates X = (C, W1, W2):
/// C ~ N(0,1) per cluster, W1 ~ Bernoulli(0.5), W2 ~ N(0,1) per unit.
/// Treatment follows a logistic mixed model on [1, W, sum of peer W] with a
/// shared N(0, intercept_var) intercept; outcomes follow a linear mixed
/// model on [1, A, sum A_peer, A C, (sum A_peer) C, X, sum of peer W].
struct GlmmScenario {
  double p1 = 0.75;
  std::map<int, std::size_t> sizes{{1, 3}, {2, 4}};
  std::map<int, Eigen::VectorXd> beta_e;
  std::map<int, Eigen::VectorXd> beta_g;
  double intercept_var = 0.25;
  double xi_var = 0.1;
  double eps_var = 1.0;

  static GlmmScenario standard();
  double p(int k) const { return k == 1 ? p1 : 1.0 - p1; }
};

inline constexpr std::size_t kColC = 0;
inline constexpr std::size_t kColW1 = 1;
inline constexpr std::size_t kColW2 = 2;

Dataset simulate_glmm(const GlmmScenario& sc, std::size_t n, std::uint64_t seed);

/// Closed-form truths: the own-treatment coefficient for DE and
/// (M - 1)(alpha - alpha') times the peer-treatment coefficient for IE.
double glmm_truth_de(const GlmmScenario& sc, double alpha);
double glmm_truth_ie(const GlmmScenario& sc, double alpha, double alpha_prime);

enum class TypeSpec { Correct, Pooled, Over };

/// Nuisance specification: correct or misspecified outcome (CO/MO) and
/// propensity (CP/MP); correct (CT), pooled (MT) or over-split (OT) typing.
struct GlmmSpecification {
  bool correct_outcome = true;
  bool correct_propensity = true;
  TypeSpec typing = TypeSpec::Correct;

  static GlmmSpecification parse(const std::string& text);  // e.g. "CO,CP,CT"
  std::string label() const;                                 // e.g. "CO,CP,CT"
};

LogisticFitOptions glmm_propensity_options(const GlmmSpecification& spec);
LinearFitOptions glmm_outcome_options(const GlmmSpecification& spec);
/// Labels by (size, 1(C < 1.5)), ranked 1..4.
std::vector<int> over_split_types(const Dataset& data);

/// One type, clusters of two units, X ~ N(0,1), A ~ Bernoulli(p_a),
/// Y = 1 + 3 A + 2 X + 0.5 X_peer + N(0,1).
Dataset simulate_noint(double p_a, std::size_t n, std::uint64_t seed);
inline constexpr double kNointAte = 3.0;

double theoretical_de_variance(double alpha, double p_a);
double seb_ate(double p_a);

/// One type, clusters of two units, one continuous covariate X ~ U(-2, 2),
/// A ~ Bernoulli(0.5) and a smooth nonlinear outcome mean.
Dataset simulate_kernel(std::size_t n, std::uint64_t seed);
/// Conditional mean of unit j's outcome in the kernel scenario.
double kernel_mean(const TreatmentVector& a, const Eigen::MatrixXd& x, std::size_t j);
/// DE(alpha) in the kernel scenario.
double kernel_truth_de(double alpha);

struct McPlan {
  std::string scenario;
  std::string spec;
  std::function<Dataset(std::size_t n, std::uint64_t seed)> generate;
  std::function<std::vector<EstimateResult>(const Dataset& data, std::uint64_t seed)> estimate;
  std::vector<std::string> estimands;
  std::vector<double> truths;
};

struct McRow {
  std::string scenario;
  std::string estimand;
  std::string spec;
  double truth = 0.0;
  double bias = 0.0;
  double emp_se = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<double> estimates;
  std::vector<double> ses;
};

struct MCResult {
  std::vector<McRow> rows;
  std::vector<std::string> errors;  // one per failed replicate
};

MCResult run_mc(const McPlan& plan, std::size_t reps, std::size_t n, std::uint64_t seed, unsigned threads = 1);

/// DE and IE under the given specification, estimated by AIPW with fitted
/// parametric nuisances and estimated type proportions.
McPlan glmm_plan(const GlmmScenario& sc, const GlmmSpecification& spec, double alpha_de = 0.4,
                 double alpha_ie = 0.8, double alpha_ie_prime = 0.2, double level = 0.05);

/// DE(alpha) over a grid, known propensity and a linear mixed outcome model.
McPlan noint_plan(double p_a, const std::vector<double>& alphas, double level = 0.05);

/// DE(alpha) by cross-fitting with the known propensity and the kernel outcome model.
McPlan kernel_plan(double alpha = 0.5, double level = 0.05, const KernelOptions& kopts = {});

/// Evenly spaced grid "start:stop:count".
std::vector<double> parse_grid(const std::string& text);

}  // namespace netfx
