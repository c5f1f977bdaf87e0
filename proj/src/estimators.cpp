#include "netfx/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "netfx/errors.hpp"
#include "netfx/parallel.hpp"
#include "netfx/rng.hpp"

namespace netfx {

ClusterEvaluation evaluate_cluster(const ClusterObservation& c, const PropensityModel& e, const OutcomeModel& g,
                                   double floor) {
  ClusterEvaluation ev;
  const PropensityValue pv = group_propensity(e, c.a, c.x, c.type, floor);
  ev.e = pv.value;
  ev.clipped = pv.clipped;
  const auto& all = assignments_of(c.size());
  ev.g.reserve(all.size());
  for (const auto& a : all) {
    Eigen::VectorXd pred = g.predict(a, c.x, c.type);
    if (pred.size() != static_cast<Eigen::Index>(c.size()) || !pred.allFinite()) {
      throw EstimationError("outcome model returned an invalid prediction for cluster " + c.id + " at assignment " +
                            a.to_string());
    }
    ev.g.push_back(std::move(pred));
  }
  return ev;
}

std::vector<ClusterEvaluation> evaluate_nuisances(const Dataset& data, const PropensityModel& e,
                                                  const OutcomeModel& g, const EvalOptions& opts) {
  std::vector<ClusterEvaluation> out(data.size());
  parallel_for(data.size(), opts.threads,
               [&](std::size_t i) { out[i] = evaluate_cluster(data[i], e, g, opts.propensity_floor); });
  return out;
}

double phi_from_evaluation(const ClusterObservation& c, const ClusterEvaluation& ev, const EstimandSpec& spec) {
  const auto& all = assignments_of(c.size());
  const Eigen::VectorXd w_obs = spec.weights(c.a, c.x, c.type);
  const auto& g_obs = ev.g[c.a.code()];
  double out = w_obs.dot(c.y - g_obs) / ev.e;
  for (std::size_t code = 0; code < all.size(); ++code) {
    out += spec.weights(all[code], c.x, c.type).dot(ev.g[code]);
  }
  return out;
}

double phi_k(const ClusterObservation& c, const PropensityModel& e, const OutcomeModel& g, const EstimandSpec& spec,
             double floor, bool* clipped) {
  const ClusterEvaluation ev = evaluate_cluster(c, e, g, floor);
  if (clipped) *clipped = ev.clipped;
  return phi_from_evaluation(c, ev, spec);
}

double psi_k(const ClusterObservation& c, const ClusterEvaluation& ev, int treat, double alpha) {
  const std::size_t m = c.size();
  if (m == 0) return 0.0;
  const auto& all = assignments_of(m);
  const std::uint32_t observed = c.a.code();
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    for (std::size_t code = 0; code < all.size(); ++code) {
      const auto& a = all[code];
      if (a[j] != treat) continue;
      double term = ev.g[code](jj);
      if (code == observed) term += (c.y(jj) - ev.g[code](jj)) / ev.e;
      total += term * policy_weight_excluding(a, j, alpha);
    }
  }
  return total / static_cast<double>(m);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> FoldAssignment::members(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] == f) out.push_back(i);
  }
  return out;
}

FoldAssignment cross_fit_split(const Dataset& data, std::uint64_t seed) {
  FoldAssignment fa;
  fa.seed = seed;
  fa.fold.assign(data.size(), 0);
  const CounterRng root(seed);
  for (const auto& [k, info] : data.types()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i].type == k) idx.push_back(i);
    }
    CounterRng rng = root.split(static_cast<std::uint64_t>(static_cast<std::int64_t>(k)));
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(idx[i - 1], idx[j]);
    }
    const std::size_t first = (idx.size() + 1) / 2;
    for (std::size_t r = 0; r < idx.size(); ++r) fa.fold[idx[r]] = r < first ? 1 : 2;
  }
  for (std::size_t i = 0; i < data.size(); ++i) fa.by_id[data[i].id] = fa.fold[i];
  return fa;
}

// ---------------------------------------------------------------------------

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw DomainError("normal quantile needs a probability in [0,1]");
  }
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement against the exact CDF
  for (int it = 0; it < 2; ++it) {
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

std::pair<double, double> confidence_interval(const EstimateResult& result, double level) {
  if (!result.variance_available || !std::isfinite(result.se)) {
    throw EstimationError("variance is unavailable, so no confidence interval can be formed");
  }
  if (!(level > 0.0 && level <= 1.0)) throw DomainError("significance level must lie in (0,1]");
  const double z = level == 1.0 ? 0.0 : normal_quantile(1.0 - level / 2.0);
  return {result.tau_hat - z * result.se, result.tau_hat + z * result.se};
}

// ---------------------------------------------------------------------------

EstimateResult assemble_estimate(const Dataset& data, const Eigen::VectorXd& phi, const EstimandSpec& spec,
                                 const TypeProportions& p, double level, std::string method) {
  if (data.size() == 0) throw EstimationError("cannot estimate from an empty dataset");
  if (phi.size() != static_cast<Eigen::Index>(data.size())) throw EstimationError("phi length mismatch");
  EstimateResult r;
  r.estimand = spec.name();
  r.method = std::move(method);
  r.p_hat = p;
  r.level = level;
  r.n = data.size();
  r.phi = phi;

  std::map<int, double> sums;
  for (std::size_t i = 0; i < data.size(); ++i) sums[data[i].type] += phi(static_cast<Eigen::Index>(i));
  bool singleton = false;
  for (const auto& [k, info] : data.types()) {
    r.theta_hat[k] = sums[k] / static_cast<double>(info.count);
    if (info.count < 2) {
      singleton = true;
      r.diagnostics.warnings.push_back("type " + std::to_string(k) +
                                       " has a single cluster; its standard error is suppressed");
    }
  }
  r.tau_hat = 0.0;
  for (const auto& [k, theta] : r.theta_hat) r.tau_hat += spec.v(k, p.at(k)) * theta;

  r.influence.resize(phi.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int li = data[i].type;
    double inf = 0.0;
    for (const auto& [k, theta] : r.theta_hat) {
      const double pk = p.at(k);
      if (k == li) inf += spec.v(k, pk) * (phi(static_cast<Eigen::Index>(i)) - theta) / pk;
      if (!p.known) inf += ((k == li ? 1.0 : 0.0) - pk) * spec.v_prime(k, pk) * theta;
    }
    r.influence(static_cast<Eigen::Index>(i)) = inf;
  }
  const double n = static_cast<double>(data.size());
  if (singleton) {
    r.variance_available = false;
    r.variance = std::numeric_limits<double>::quiet_NaN();
    r.se = std::numeric_limits<double>::quiet_NaN();
    r.ci = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  } else {
    r.variance = r.influence.squaredNorm() / n;
    r.se = std::sqrt(r.variance / n);
    r.ci = confidence_interval(r, level);
  }
  return r;
}

EstimateResult estimate_from_evaluations(const Dataset& data, const std::vector<ClusterEvaluation>& evals,
                                         const EstimandSpec& spec, const TypeProportions& p, double level,
                                         std::string method) {
  if (evals.size() != data.size()) throw EstimationError("evaluation count does not match the dataset");
  spec.validate_for(data);
  Eigen::VectorXd phi(static_cast<Eigen::Index>(data.size()));
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    phi(static_cast<Eigen::Index>(i)) = phi_from_evaluation(data[i], evals[i], spec);
    clipped += evals[i].clipped ? 1 : 0;
  }
  EstimateResult r = assemble_estimate(data, phi, spec, p, level, std::move(method));
  r.diagnostics.propensity_clipped = clipped;
  if (clipped > 0) {
    r.diagnostics.warnings.push_back(std::to_string(clipped) + " propensities were clipped to the truncation floor");
  }
  return r;
}

EstimateResult aipw_estimate(const Dataset& data, const PropensityModel& e, const OutcomeModel& g,
                             const EstimandSpec& spec, const TypeProportions& p, double level,
                             const EvalOptions& opts) {
  const auto evals = evaluate_nuisances(data, e, g, opts);
  EstimateResult r = estimate_from_evaluations(data, evals, spec, p, level, "aipw");
  r.diagnostics.nuisance = {{"propensity", e.summary()}, {"outcome", g.summary()}};
  if (const auto* km = dynamic_cast<const KernelModel*>(&g)) r.diagnostics.outcome_fallbacks = km->fallbacks();
  return r;
}

// ---------------------------------------------------------------------------

CrossfitEvaluation crossfit_evaluate(const Dataset& data, const NuisanceFitters& fitters, std::uint64_t seed,
                                     const EvalOptions& opts) {
  for (const auto& [k, info] : data.types()) {
    if (info.count < 2) {
      throw EstimationError("cross-fitting needs at least two clusters of every type; type " + std::to_string(k) +
                            " has " + std::to_string(info.count));
    }
  }
  CrossfitEvaluation cf;
  cf.folds = cross_fit_split(data, seed);
  cf.evals.resize(data.size());
  cf.nuisance = nlohmann::json::object();
  for (int f = 1; f <= 2; ++f) {
    const auto held = cf.folds.members(f);
    const Dataset train = data.subset(cf.folds.members(3 - f));
    std::shared_ptr<const PropensityModel> e;
    std::shared_ptr<const OutcomeModel> g;
    try {
      e = fitters.fit_e(train);
    } catch (const std::exception& ex) {
      throw EstimationError("fold " + std::to_string(f) + ": propensity model fit failed: " + ex.what());
    }
    try {
      g = fitters.fit_g(train);
    } catch (const std::exception& ex) {
      throw EstimationError("fold " + std::to_string(f) + ": outcome model fit failed: " + ex.what());
    }
    parallel_for(held.size(), opts.threads, [&](std::size_t r) {
      const std::size_t i = held[r];
      cf.evals[i] = evaluate_cluster(data[i], *e, *g, opts.propensity_floor);
    });
    if (const auto* km = dynamic_cast<const KernelModel*>(g.get())) cf.outcome_fallbacks += km->fallbacks();
    cf.nuisance["fold" + std::to_string(f)] = {{"propensity", e->summary()}, {"outcome", g->summary()}};
  }
  return cf;
}

EstimateResult estimate_from_crossfit(const Dataset& data, const CrossfitEvaluation& cf, const EstimandSpec& spec,
                                      const TypeProportions& p, double level) {
  EstimateResult r = estimate_from_evaluations(data, cf.evals, spec, p, level, "crossfit");
  r.diagnostics.nuisance = cf.nuisance;
  r.diagnostics.outcome_fallbacks = cf.outcome_fallbacks;
  const auto f1 = cf.folds.members(1).size();
  r.diagnostics.folds = {{"seed", cf.folds.seed}, {"sizes", {f1, data.size() - f1}}};
  return r;
}

EstimateResult crossfit_estimate(const Dataset& data, const NuisanceFitters& fitters, const EstimandSpec& spec,
                                 const TypeProportions& p, double level, std::uint64_t seed,
                                 const EvalOptions& opts) {
  spec.validate_for(data);
  const CrossfitEvaluation cf = crossfit_evaluate(data, fitters, seed, opts);
  return estimate_from_crossfit(data, cf, spec, p, level);
}

// ---------------------------------------------------------------------------

namespace {

double msd(const Eigen::VectorXd& d) {
  const double mean = d.mean();
  return (d.array() - mean).square().mean();
}

}  // namespace

double msd_variance_de(const Dataset& data, const std::vector<ClusterEvaluation>& evals,
                       const PolicyAllocation& alloc) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double alpha = alloc.alpha_for(data[i].type);
    d(static_cast<Eigen::Index>(i)) = psi_k(data[i], evals[i], 1, alpha) - psi_k(data[i], evals[i], 0, alpha);
  }
  return msd(d);
}

double msd_variance_ie(const Dataset& data, const std::vector<ClusterEvaluation>& evals,
                       const PolicyAllocation& alloc) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int k = data[i].type;
    d(static_cast<Eigen::Index>(i)) =
        psi_k(data[i], evals[i], 0, alloc.alpha_for(k)) - psi_k(data[i], evals[i], 0, alloc.alpha_prime_for(k));
  }
  return msd(d);
}

// ---------------------------------------------------------------------------

nlohmann::json EstimateResult::to_json() const {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::json theta = nlohmann::json::object();
  for (const auto& [k, v] : theta_hat) theta[std::to_string(k)] = v;
  nlohmann::json pj = nlohmann::json::object();
  for (const auto& [k, v] : p_hat.p_hat) pj[std::to_string(k)] = v;
  nlohmann::json diag{{"method", method},
                      {"clusters", n},
                      {"propensity_clipped", diagnostics.propensity_clipped},
                      {"outcome_fallbacks", diagnostics.outcome_fallbacks},
                      {"p_known", p_hat.known},
                      {"variance", num(variance)},
                      {"variance_available", variance_available},
                      {"level", level},
                      {"warnings", diagnostics.warnings},
                      {"nuisance", diagnostics.nuisance}};
  if (!diagnostics.folds.is_null()) diag["folds"] = diagnostics.folds;
  return {{"estimand", estimand},
          {"tau", tau_hat},
          {"se", num(se)},
          {"ci", {num(ci.first), num(ci.second)}},
          {"theta_by_type", theta},
          {"p_by_type", pj},
          {"diagnostics", diag}};
}

}  // namespace netfx
