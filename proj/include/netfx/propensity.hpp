#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "netfx/data.hpp"
#include "netfx/quadrature.hpp"

namespace netfx {

inline constexpr double kDefaultPropensityFloor = 1e-6;

/// Cluster-level propensity e(a | x, k): the probability of the whole
/// treatment vector given covariates and type.
class PropensityModel {
 public:
  virtual ~PropensityModel() = default;
  /// Unclipped model value.
  virtual double probability(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const = 0;
  virtual std::string kind() const = 0;
  virtual nlohmann::json summary() const = 0;
};

struct PropensityValue {
  double value = 0.0;
  bool clipped = false;
};

/// Model value truncated to [floor, 1 - floor].
PropensityValue group_propensity(const PropensityModel& model, const TreatmentVector& a, const Eigen::MatrixXd& x,
                                 int k, double floor = kDefaultPropensityFloor);

/// Independent Bernoulli assignment with known unit probabilities.
class KnownRandomization final : public PropensityModel {
 public:
  using UnitProbability = std::function<double(std::size_t j, const Eigen::MatrixXd& x, int k)>;

  explicit KnownRandomization(std::map<int, double> per_type);
  static KnownRandomization constant(double p);
  KnownRandomization(UnitProbability unit_prob, std::string description);

  double probability(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const override;
  double unit_probability(std::size_t j, const Eigen::MatrixXd& x, int k) const;
  std::string kind() const override { return "known"; }
  nlohmann::json summary() const override;

 private:
  UnitProbability unit_prob_;
  nlohmann::json description_;
};

/// Column selection for unit-level features [1, x_j[own], sum_{l != j} x_l[peer]].
/// An unset list means every covariate column.
struct FeatureSpec {
  std::optional<std::vector<std::size_t>> own;
  std::optional<std::vector<std::size_t>> peer;

  std::vector<std::size_t> own_columns(std::size_t d) const;
  std::vector<std::size_t> peer_columns(std::size_t d) const;
  std::size_t width(std::size_t d) const;
  /// Feature matrix, one row per unit.
  Eigen::MatrixXd build(const Eigen::MatrixXd& x) const;
};

struct LogisticFitInfo {
  double loglik = 0.0;  // total over the type's clusters
  int iterations = 0;
  double grad_norm = 0.0;  // infinity norm of the mean log-likelihood gradient
  bool lambda_at_bound = false;
};

struct LogisticTypeParams {
  Eigen::VectorXd beta;
  double lambda = 1.0;  // precision of the random intercept
  LogisticFitInfo info;
};

/// Logistic model with a shared Gaussian random intercept per cluster:
/// logit pr(A_j = 1 | x, b) = f_j(x)' beta_k + b, b ~ N(0, 1/lambda_k).
class LogisticMixedModel final : public PropensityModel {
 public:
  LogisticMixedModel(std::map<int, LogisticTypeParams> params, FeatureSpec features, std::size_t quad_nodes = 30,
                     bool adaptive = true);

  double probability(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const override;
  std::string kind() const override { return "logistic_mixed"; }
  nlohmann::json summary() const override;

  const LogisticTypeParams& params(int k) const;
  const std::map<int, LogisticTypeParams>& all_params() const { return params_; }
  const FeatureSpec& features() const { return features_; }

 private:
  std::map<int, LogisticTypeParams> params_;
  FeatureSpec features_;
  QuadratureRule quad_;
  bool adaptive_;
};

/// One cluster prepared for likelihood evaluation.
struct MixedLogitCluster {
  Eigen::MatrixXd features;
  TreatmentVector a;
};

/// log e(a | x) for one cluster and, optionally, its gradient with respect
/// to (beta, log lambda).
double mixed_logit_log_probability(const MixedLogitCluster& c, const Eigen::VectorXd& beta, double log_lambda,
                                   const QuadratureRule& quad, bool adaptive, Eigen::VectorXd* grad = nullptr);

/// Sum of cluster log-probabilities; grad has length beta.size() + 1.
double mixed_logit_loglik(const std::vector<MixedLogitCluster>& clusters, const Eigen::VectorXd& beta,
                          double log_lambda, const QuadratureRule& quad, bool adaptive,
                          Eigen::VectorXd* grad = nullptr);

struct LogisticFitOptions {
  FeatureSpec features;
  std::size_t quad_nodes = 30;
  bool adaptive = true;
  double tol = 1e-8;
  int max_iter = 200;
  /// Fit one parameter set shared by all types.
  bool pool_types = false;
};

LogisticMixedModel fit_logistic_mixed(const Dataset& data, const LogisticFitOptions& opts = {});

/// Plain unit-level logistic regression by Newton-Raphson (used for
/// initialisation and as the random-effect-free reference).
Eigen::VectorXd fit_plain_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& treated, int max_iter = 50);

}  // namespace netfx
