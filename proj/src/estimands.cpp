#include "netfx/estimands.hpp"

#include <cmath>

#include "netfx/errors.hpp"

namespace netfx {

PolicyAllocation PolicyAllocation::uniform(double alpha) {
  PolicyAllocation p;
  p.alpha_default = alpha;
  return p;
}

PolicyAllocation PolicyAllocation::uniform(double alpha, double alpha_prime) {
  PolicyAllocation p;
  p.alpha_default = alpha;
  p.alpha_prime_default = alpha_prime;
  return p;
}

namespace {

double checked_probability(double v, const char* what, int k) {
  if (!(v > 0.0 && v < 1.0)) {
    throw ConfigError(std::string(what) + " for type " + std::to_string(k) + " must lie in (0,1)");
  }
  return v;
}

}  // namespace

double PolicyAllocation::alpha_for(int k) const {
  if (auto it = alpha.find(k); it != alpha.end()) return checked_probability(it->second, "alpha", k);
  if (alpha_default) return checked_probability(*alpha_default, "alpha", k);
  throw ConfigError("no alpha configured for type " + std::to_string(k));
}

double PolicyAllocation::alpha_prime_for(int k) const {
  if (alpha_prime) {
    if (auto it = alpha_prime->find(k); it != alpha_prime->end()) {
      return checked_probability(it->second, "alpha_prime", k);
    }
  }
  if (alpha_prime_default) return checked_probability(*alpha_prime_default, "alpha_prime", k);
  throw ConfigError("no alpha_prime configured for type " + std::to_string(k));
}

EstimandSpec::EstimandSpec(std::string name, WeightFunction w, ScalarFunction v, ScalarFunction v_prime)
    : name_(std::move(name)), w_(std::move(w)), v_(std::move(v)), v_prime_(std::move(v_prime)) {
  if (!w_ || !v_ || !v_prime_) throw ConfigError("estimand " + name_ + " needs w, v and v'");
}

Eigen::VectorXd EstimandSpec::weights(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const {
  Eigen::VectorXd w = w_(a, x, k);
  if (static_cast<std::size_t>(w.size()) != a.size()) {
    throw DomainError("estimand " + name_ + ": weight vector length " + std::to_string(w.size()) +
                      " does not match cluster size " + std::to_string(a.size()));
  }
  if (!w.allFinite()) {
    throw DomainError("estimand " + name_ + ": non-finite weight for type " + std::to_string(k) +
                      ", assignment " + a.to_string());
  }
  return w;
}

void EstimandSpec::validate_for(const Dataset& data) const {
  for (const auto& [k, info] : data.types()) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(info.size),
                                                    static_cast<Eigen::Index>(info.covariate_dim));
    (void)weights(assignments_of(info.size).front(), x, k);
    (void)v(k, 0.5);
    (void)v_prime(k, 0.5);
  }
}

EstimandSpec de_spec(const PolicyAllocation& alloc) {
  auto w = [alloc](const TreatmentVector& a, const Eigen::MatrixXd&, int k) {
    const double alpha = alloc.alpha_for(k);
    const auto m = a.size();
    Eigen::VectorXd out(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
      const double sign = a[j] ? 1.0 : -1.0;
      out(static_cast<Eigen::Index>(j)) = sign * policy_weight_excluding(a, j, alpha) / static_cast<double>(m);
    }
    return out;
  };
  return EstimandSpec("DE", w, identity_v(), unit_v_prime());
}

EstimandSpec ie_spec(const PolicyAllocation& alloc) {
  if (!alloc.has_alpha_prime()) throw ConfigError("indirect effect requires alpha_prime");
  auto w = [alloc](const TreatmentVector& a, const Eigen::MatrixXd&, int k) {
    const double alpha = alloc.alpha_for(k);
    const double alpha_prime = alloc.alpha_prime_for(k);
    const auto m = a.size();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
      if (a[j]) continue;
      out(static_cast<Eigen::Index>(j)) =
          (policy_weight_excluding(a, j, alpha) - policy_weight_excluding(a, j, alpha_prime)) /
          static_cast<double>(m);
    }
    return out;
  };
  return EstimandSpec("IE", w, identity_v(), unit_v_prime());
}

EstimandSpec unit_average_spec(int treat, const PolicyAllocation& alloc) {
  if (treat != 0 && treat != 1) throw ConfigError("own treatment must be 0 or 1");
  auto w = [alloc, treat](const TreatmentVector& a, const Eigen::MatrixXd&, int k) {
    const double alpha = alloc.alpha_for(k);
    const auto m = a.size();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
      if (a[j] != treat) continue;
      out(static_cast<Eigen::Index>(j)) = policy_weight_excluding(a, j, alpha) / static_cast<double>(m);
    }
    return out;
  };
  return EstimandSpec("Ybar(" + std::to_string(treat) + ")", w, identity_v(), unit_v_prime());
}

EstimandSpec generic_spec(WeightTable table, ScalarFunction v, ScalarFunction v_prime, std::string name) {
  auto shared = std::make_shared<const WeightTable>(std::move(table));
  auto w = [shared](const TreatmentVector& a, const Eigen::MatrixXd& x, int k) -> Eigen::VectorXd {
    auto it = shared->find({k, a.code()});
    if (it == shared->end()) {
      throw ConfigError("generic estimand has no weight for type " + std::to_string(k) + ", assignment " +
                        a.to_string());
    }
    return it->second(x);
  };
  return EstimandSpec(std::move(name), w, std::move(v), std::move(v_prime));
}

}  // namespace netfx
