#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "netfx/data.hpp"
#include "netfx/estimands.hpp"
#include "netfx/estimators.hpp"
#include "netfx/outcome.hpp"
#include "netfx/propensity.hpp"

namespace testing {

// Discrete world: one binary covariate per unit, tabulated propensity and
// outcome mean for every (type, x pattern, treatment vector).
struct DiscreteWorld {
  std::map<int, std::size_t> sizes;
  std::map<int, double> p;  // type probabilities
  std::map<int, double> q;  // pr(x_j = 1) per type
  // keyed by (k, x code, a code)
  std::map<std::tuple<int, std::uint32_t, std::uint32_t>, double> e;
  std::map<std::tuple<int, std::uint32_t, std::uint32_t>, Eigen::VectorXd> g;

  static std::uint32_t x_code(const Eigen::MatrixXd& x) {
    std::uint32_t c = 0;
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      if (x(j, 0) > 0.5) c |= 1u << j;
    return c;
  }
  static Eigen::MatrixXd x_of(std::uint32_t code, std::size_t m) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(m), 1);
    for (std::size_t j = 0; j < m; ++j) x(static_cast<Eigen::Index>(j), 0) = (code >> j) & 1u;
    return x;
  }
  double x_prob(int k, std::uint32_t code) const {
    double pr = 1.0;
    for (std::size_t j = 0; j < sizes.at(k); ++j) pr *= ((code >> j) & 1u) ? q.at(k) : 1.0 - q.at(k);
    return pr;
  }
};

// Random positive tables; e is normalised over a for each x.
inline DiscreteWorld make_world(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  DiscreteWorld w;
  w.sizes = {{1, 2}, {2, 3}};
  w.p = {{1, 0.35}, {2, 0.65}};
  w.q = {{1, 0.4}, {2, 0.7}};
  for (const auto& [k, m] : w.sizes) {
    const std::uint32_t na = 1u << m;
    for (std::uint32_t xc = 0; xc < na; ++xc) {
      double total = 0.0;
      std::vector<double> raw(na);
      for (auto& r : raw) total += (r = u(gen));
      for (std::uint32_t ac = 0; ac < na; ++ac) {
        w.e[{k, xc, ac}] = raw[ac] / total;
        Eigen::VectorXd gv(static_cast<Eigen::Index>(m));
        for (auto& v : gv) v = n(gen);
        w.g[{k, xc, ac}] = gv;
      }
    }
  }
  return w;
}

class TablePropensity final : public netfx::PropensityModel {
 public:
  explicit TablePropensity(const DiscreteWorld& w) : w_(w) {}
  double probability(const netfx::TreatmentVector& a, const Eigen::MatrixXd& x, int k) const override {
    return w_.e.at({k, DiscreteWorld::x_code(x), a.code()});
  }
  std::string kind() const override { return "table"; }
  nlohmann::json summary() const override { return {{"kind", "table"}}; }

 private:
  const DiscreteWorld& w_;
};

class TableOutcome final : public netfx::OutcomeModel {
 public:
  explicit TableOutcome(const DiscreteWorld& w) : w_(w) {}
  Eigen::VectorXd predict(const netfx::TreatmentVector& a, const Eigen::MatrixXd& x, int k) const override {
    return w_.g.at({k, DiscreteWorld::x_code(x), a.code()});
  }
  std::string kind() const override { return "table"; }
  nlohmann::json summary() const override { return {{"kind", "table"}}; }

 private:
  const DiscreteWorld& w_;
};

// Single-cluster observation of the discrete world with Y at its conditional mean.
inline netfx::ClusterObservation world_cluster(const DiscreteWorld& w, int k, std::uint32_t xc, std::uint32_t ac) {
  const std::size_t m = w.sizes.at(k);
  netfx::ClusterObservation c;
  c.id = "w";
  c.type = k;
  c.x = DiscreteWorld::x_of(xc, m);
  c.a = netfx::TreatmentVector::from_code(ac, m);
  c.y = w.g.at({k, xc, ac});
  return c;
}

// theta_k under the true outcome law.
inline double world_theta(const DiscreteWorld& w, const netfx::EstimandSpec& spec, int k) {
  const std::size_t m = w.sizes.at(k);
  double total = 0.0;
  for (std::uint32_t xc = 0; xc < (1u << m); ++xc) {
    const Eigen::MatrixXd x = DiscreteWorld::x_of(xc, m);
    double inner = 0.0;
    for (std::uint32_t ac = 0; ac < (1u << m); ++ac) {
      inner += spec.weights(netfx::TreatmentVector::from_code(ac, m), x, k).dot(w.g.at({k, xc, ac}));
    }
    total += w.x_prob(k, xc) * inner;
  }
  return total;
}

// Exact expectation of phi_k over the world's covariate and treatment law,
// with phi built from the supplied nuisance models.
inline double world_phi_mean(const DiscreteWorld& w, const netfx::PropensityModel& e, const netfx::OutcomeModel& g,
                             const netfx::EstimandSpec& spec, int k) {
  const std::size_t m = w.sizes.at(k);
  double total = 0.0;
  for (std::uint32_t xc = 0; xc < (1u << m); ++xc) {
    for (std::uint32_t ac = 0; ac < (1u << m); ++ac) {
      const auto c = world_cluster(w, k, xc, ac);
      total += w.x_prob(k, xc) * w.e.at({k, xc, ac}) * netfx::phi_k(c, e, g, spec, 0.0);
    }
  }
  return total;
}

// Exact expectation of tau-hat with the type proportions known.
inline double world_tau_mean(const DiscreteWorld& w, const netfx::PropensityModel& e, const netfx::OutcomeModel& g,
                             const netfx::EstimandSpec& spec) {
  double tau = 0.0;
  for (const auto& [k, pk] : w.p) tau += spec.v(k, pk) * world_phi_mean(w, e, g, spec, k);
  return tau;
}

inline double world_tau(const DiscreteWorld& w, const netfx::EstimandSpec& spec) {
  double tau = 0.0;
  for (const auto& [k, pk] : w.p) tau += spec.v(k, pk) * world_theta(w, spec, k);
  return tau;
}

// Exact expectation of the full influence function, including the term for
// estimated type proportions, at the true nuisances.
inline double world_influence_mean(const DiscreteWorld& w, const netfx::PropensityModel& e,
                                   const netfx::OutcomeModel& g, const netfx::EstimandSpec& spec) {
  std::map<int, double> theta;
  for (const auto& [k, pk] : w.p) theta[k] = world_theta(w, spec, k);
  double total = 0.0;
  for (const auto& [k, pk] : w.p) {
    const std::size_t m = w.sizes.at(k);
    for (std::uint32_t xc = 0; xc < (1u << m); ++xc) {
      for (std::uint32_t ac = 0; ac < (1u << m); ++ac) {
        const auto c = world_cluster(w, k, xc, ac);
        double inf = spec.v(k, pk) * (netfx::phi_k(c, e, g, spec, 0.0) - theta[k]) / pk;
        for (const auto& [l, pl] : w.p) inf += ((l == k ? 1.0 : 0.0) - pl) * spec.v_prime(l, pl) * theta[l];
        total += pk * w.x_prob(k, xc) * w.e.at({k, xc, ac}) * inf;
      }
    }
  }
  return total;
}

// The world with its outcome table shifted by an arbitrary perturbation.
inline DiscreteWorld perturbed_outcomes(const DiscreteWorld& w, std::uint64_t seed) {
  DiscreteWorld out = w;
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, 2.0);
  for (auto& [key, v] : out.g)
    for (auto& x : v) x += n(gen);
  return out;
}

// The world with a different, still positive, propensity table.
inline DiscreteWorld perturbed_propensity(const DiscreteWorld& w, std::uint64_t seed) {
  DiscreteWorld out = w;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::map<std::pair<int, std::uint32_t>, double> totals;
  for (auto& [key, v] : out.e) {
    v = u(gen);
    totals[{std::get<0>(key), std::get<1>(key)}] += v;
  }
  for (auto& [key, v] : out.e) v /= totals[{std::get<0>(key), std::get<1>(key)}];
  return out;
}

// Random continuous dataset of mixed cluster sizes with one treatment draw per unit.
inline netfx::Dataset random_dataset(std::uint64_t seed, std::size_t n, std::map<int, std::size_t> sizes = {{1, 2}, {2, 3}},
                                     std::size_t d = 2) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<netfx::ClusterObservation> clusters;
  std::vector<int> types;
  for (const auto& kv : sizes) types.push_back(kv.first);
  for (std::size_t i = 0; i < n; ++i) {
    netfx::ClusterObservation c;
    c.id = std::to_string(i + 1);
    c.type = types[i % types.size()];
    const auto m = static_cast<Eigen::Index>(sizes.at(c.type));
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(m));
    for (auto& b : bits) b = coin(gen) ? 1 : 0;
    c.a = netfx::TreatmentVector(bits);
    c.x.resize(m, static_cast<Eigen::Index>(d));
    for (auto& v : c.x.reshaped()) v = nd(gen);
    c.y.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) c.y(j) = 1.0 + 2.0 * bits[static_cast<std::size_t>(j)] + c.x(j, 0) + nd(gen);
    clusters.push_back(std::move(c));
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  return netfx::Dataset(std::move(clusters), names);
}

inline double expit(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace testing
