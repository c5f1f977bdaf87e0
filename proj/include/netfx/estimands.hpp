#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "netfx/data.hpp"

namespace netfx {

/// Per-type treatment allocation probabilities. A fallback value, when set,
/// applies to every type without an explicit entry.
struct PolicyAllocation {
  std::map<int, double> alpha;
  std::optional<std::map<int, double>> alpha_prime;
  std::optional<double> alpha_default;
  std::optional<double> alpha_prime_default;

  static PolicyAllocation uniform(double alpha);
  static PolicyAllocation uniform(double alpha, double alpha_prime);

  double alpha_for(int k) const;
  double alpha_prime_for(int k) const;
  bool has_alpha_prime() const { return alpha_prime.has_value() || alpha_prime_default.has_value(); }
};

using WeightFunction =
    std::function<Eigen::VectorXd(const TreatmentVector& a, const Eigen::MatrixXd& x, int k)>;
using ScalarFunction = std::function<double(int k, double p)>;

/// A member of the estimand family: per-type weight vectors w_k(a, x) that
/// define theta_k, and the population weights v_k(p_k) (with derivative)
/// that combine them into tau = sum_k v_k(p_k) theta_k.
class EstimandSpec {
 public:
  EstimandSpec(std::string name, WeightFunction w, ScalarFunction v, ScalarFunction v_prime);

  const std::string& name() const { return name_; }

  /// Evaluates w_k(a, x); throws DomainError on non-finite entries.
  Eigen::VectorXd weights(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const;
  double v(int k, double p) const { return v_(k, p); }
  double v_prime(int k, double p) const { return v_prime_(k, p); }

  /// Checks that weights can be evaluated for every type present in data.
  void validate_for(const Dataset& data) const;

 private:
  std::string name_;
  WeightFunction w_;
  ScalarFunction v_;
  ScalarFunction v_prime_;
};

/// Direct effect DE(alpha): entry j = {1(a_j=1) - 1(a_j=0)} pi(a_(-j); alpha_k) / M_k.
EstimandSpec de_spec(const PolicyAllocation& alloc);

/// Indirect effect IE(alpha, alpha'): entry j = 1(a_j=0) {pi(.; alpha) - pi(.; alpha')} / M_k.
EstimandSpec ie_spec(const PolicyAllocation& alloc);

/// Unit-average potential outcome at own treatment `treat`: 1(a_j=treat) pi(a_(-j); alpha) / M_k.
EstimandSpec unit_average_spec(int treat, const PolicyAllocation& alloc);

using CovariateWeight = std::function<Eigen::VectorXd(const Eigen::MatrixXd& x)>;
/// Keyed by (type, assignment code); see TreatmentVector::code.
using WeightTable = std::map<std::pair<int, std::uint32_t>, CovariateWeight>;

/// Arbitrary bounded linear estimand given as an explicit weight table.
/// Missing (k, a) entries raise ConfigError when evaluated.
EstimandSpec generic_spec(WeightTable table, ScalarFunction v, ScalarFunction v_prime,
                          std::string name = "generic");

inline ScalarFunction identity_v() {
  return [](int, double p) { return p; };
}
inline ScalarFunction unit_v_prime() {
  return [](int, double) { return 1.0; };
}

}  // namespace netfx
