#include "netfx/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "netfx/errors.hpp"
#include "netfx/optimize.hpp"

namespace netfx {

namespace {

double expit(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double log1pexp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

std::vector<std::size_t> all_columns(std::size_t d) {
  std::vector<std::size_t> cols(d);
  for (std::size_t c = 0; c < d; ++c) cols[c] = c;
  return cols;
}

constexpr double kMaxLogLambda = 12.0;
constexpr double kMaxNodeSpacing = 0.6;
constexpr double kMaxQuadOrder = 400.0;

}  // namespace

PropensityValue group_propensity(const PropensityModel& model, const TreatmentVector& a, const Eigen::MatrixXd& x,
                                 int k, double floor) {
  const double e = model.probability(a, x, k);
  if (!std::isfinite(e)) throw EstimationError("propensity is not finite for assignment " + a.to_string());
  if (e < floor) return {floor, true};
  if (e > 1.0 - floor) return {1.0 - floor, true};
  return {e, false};
}

// ---------------------------------------------------------------------------

KnownRandomization::KnownRandomization(std::map<int, double> per_type) {
  for (const auto& [k, p] : per_type) {
    if (!(p > 0.0 && p < 1.0)) {
      throw DomainError("randomization probability for type " + std::to_string(k) + " must lie in (0,1)");
    }
  }
  description_ = nlohmann::json::object();
  for (const auto& [k, p] : per_type) description_[std::to_string(k)] = p;
  unit_prob_ = [per_type = std::move(per_type)](std::size_t, const Eigen::MatrixXd&, int k) {
    auto it = per_type.find(k);
    if (it == per_type.end()) throw ConfigError("no randomization probability for type " + std::to_string(k));
    return it->second;
  };
}

KnownRandomization KnownRandomization::constant(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("randomization probability must lie in (0,1)");
  return KnownRandomization([p](std::size_t, const Eigen::MatrixXd&, int) { return p; }, std::to_string(p));
}

KnownRandomization::KnownRandomization(UnitProbability unit_prob, std::string description)
    : unit_prob_(std::move(unit_prob)), description_(std::move(description)) {}

double KnownRandomization::unit_probability(std::size_t j, const Eigen::MatrixXd& x, int k) const {
  const double p = unit_prob_(j, x, k);
  if (!(p > 0.0 && p < 1.0)) throw DomainError("unit treatment probability outside (0,1)");
  return p;
}

double KnownRandomization::probability(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const {
  double e = 1.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double p = unit_probability(j, x, k);
    e *= a[j] ? p : 1.0 - p;
  }
  return e;
}

nlohmann::json KnownRandomization::summary() const { return {{"kind", "known"}, {"prob", description_}}; }

// ---------------------------------------------------------------------------

std::vector<std::size_t> FeatureSpec::own_columns(std::size_t d) const { return own ? *own : all_columns(d); }
std::vector<std::size_t> FeatureSpec::peer_columns(std::size_t d) const { return peer ? *peer : all_columns(d); }

std::size_t FeatureSpec::width(std::size_t d) const { return 1 + own_columns(d).size() + peer_columns(d).size(); }

Eigen::MatrixXd FeatureSpec::build(const Eigen::MatrixXd& x) const {
  const auto d = static_cast<std::size_t>(x.cols());
  const auto oc = own_columns(d);
  const auto pc = peer_columns(d);
  for (auto c : oc) {
    if (c >= d) throw ConfigError("feature column " + std::to_string(c) + " out of range");
  }
  for (auto c : pc) {
    if (c >= d) throw ConfigError("feature column " + std::to_string(c) + " out of range");
  }
  const Eigen::Index m = x.rows();
  Eigen::MatrixXd f(m, static_cast<Eigen::Index>(1 + oc.size() + pc.size()));
  const Eigen::RowVectorXd total = x.colwise().sum();
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index c = 0;
    f(j, c++) = 1.0;
    for (auto col : oc) f(j, c++) = x(j, static_cast<Eigen::Index>(col));
    for (auto col : pc) {
      const auto cc = static_cast<Eigen::Index>(col);
      f(j, c++) = total(cc) - x(j, cc);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

double mixed_logit_log_probability(const MixedLogitCluster& c, const Eigen::VectorXd& beta, double log_lambda,
                                   const QuadratureRule& quad, bool adaptive, Eigen::VectorXd* grad) {
  const double lambda = std::exp(log_lambda);
  const Eigen::VectorXd eta = c.features * beta;
  const Eigen::Index m = eta.size();

  // log of prod_j e_j(a_j | b) * phi(b; lambda)
  auto log_integrand = [&](double b) {
    double s = 0.5 * std::log(lambda / (2.0 * std::numbers::pi)) - 0.5 * lambda * b * b;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double z = eta(j) + b;
      s += (c.a[static_cast<std::size_t>(j)] ? z : 0.0) - log1pexp(z);
    }
    return s;
  };

  double center = 0.0;
  double scale = 1.0 / std::sqrt(lambda);
  if (adaptive) {
    double b = 0.0;
    double curv = lambda;
    for (int it = 0; it < 100; ++it) {
      double d1 = -lambda * b;
      curv = lambda;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double p = expit(eta(j) + b);
        d1 += c.a[static_cast<std::size_t>(j)] - p;
        curv += p * (1.0 - p);
      }
      const double step = d1 / curv;
      b += step;
      if (std::abs(step) < 1e-12 * (1.0 + std::abs(b))) break;
    }
    curv = lambda;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double p = expit(eta(j) + b);
      curv += p * (1.0 - p);
    }
    center = b;
    scale = 1.0 / std::sqrt(curv);
  }

  // The integrand has poles a distance pi from the real line, so the node
  // spacing (about scale * pi / sqrt(q)) must stay well below pi; wide
  // random effects get a longer rule.
  const QuadratureRule* rule = &quad;
  const double needed = std::ceil(std::pow(scale * std::numbers::pi / kMaxNodeSpacing, 2));
  if (needed > static_cast<double>(quad.order())) {
    const auto order = static_cast<std::size_t>(std::min(needed, static_cast<double>(kMaxQuadOrder)));
    if (order > quad.order()) rule = &cached_gauss_hermite((order + 9) / 10 * 10);
  }
  const Eigen::VectorXd& nodes = rule->nodes;
  const Eigen::VectorXd& weights = rule->weights;

  const Eigen::Index q = nodes.size();
  Eigen::VectorXd logt(q), bs(q);
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < q; ++i) {
    const double t = nodes(i);
    bs(i) = center + std::numbers::sqrt2 * scale * t;
    logt(i) = std::log(std::numbers::sqrt2 * scale * weights(i)) + t * t + log_integrand(bs(i));
    top = std::max(top, logt(i));
  }
  Eigen::VectorXd rel = (logt.array() - top).exp();
  const double total = rel.sum();
  const double log_e = top + std::log(total);

  if (grad) {
    const Eigen::Index p = beta.size();
    grad->setZero(p + 1);
    rel /= total;
    for (Eigen::Index i = 0; i < q; ++i) {
      if (rel(i) == 0.0) continue;
      const double b = bs(i);
      for (Eigen::Index j = 0; j < m; ++j) {
        const double r = c.a[static_cast<std::size_t>(j)] - expit(eta(j) + b);
        grad->head(p) += rel(i) * r * c.features.row(j).transpose();
      }
      (*grad)(p) += rel(i) * 0.5 * (1.0 - lambda * b * b);
    }
  }
  return log_e;
}

double mixed_logit_loglik(const std::vector<MixedLogitCluster>& clusters, const Eigen::VectorXd& beta,
                          double log_lambda, const QuadratureRule& quad, bool adaptive, Eigen::VectorXd* grad) {
  double total = 0.0;
  Eigen::VectorXd g;
  if (grad) grad->setZero(beta.size() + 1);
  for (const auto& c : clusters) {
    total += mixed_logit_log_probability(c, beta, log_lambda, quad, adaptive, grad ? &g : nullptr);
    if (grad) *grad += g;
  }
  return total;
}

// ---------------------------------------------------------------------------

LogisticMixedModel::LogisticMixedModel(std::map<int, LogisticTypeParams> params, FeatureSpec features,
                                       std::size_t quad_nodes, bool adaptive)
    : params_(std::move(params)), features_(std::move(features)), quad_(gauss_hermite(quad_nodes)),
      adaptive_(adaptive) {
  for (const auto& [k, p] : params_) {
    if (!(p.lambda > 0.0) || !std::isfinite(p.lambda)) {
      throw DomainError("random-intercept precision must be positive for type " + std::to_string(k));
    }
  }
}

const LogisticTypeParams& LogisticMixedModel::params(int k) const {
  auto it = params_.find(k);
  if (it == params_.end()) throw ConfigError("propensity model has no parameters for type " + std::to_string(k));
  return it->second;
}

double LogisticMixedModel::probability(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const {
  const auto& p = params(k);
  MixedLogitCluster c{features_.build(x), a};
  if (c.features.cols() != p.beta.size()) {
    throw ConfigError("feature width does not match the coefficient vector for type " + std::to_string(k));
  }
  return std::exp(mixed_logit_log_probability(c, p.beta, std::log(p.lambda), quad_, adaptive_));
}

nlohmann::json LogisticMixedModel::summary() const {
  nlohmann::json out{{"kind", "logistic_mixed"}, {"quad_nodes", quad_.order()}, {"adaptive", adaptive_}};
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [k, p] : params_) {
    types[std::to_string(k)] = {{"beta", std::vector<double>(p.beta.data(), p.beta.data() + p.beta.size())},
                                {"lambda", p.lambda},
                                {"loglik", p.info.loglik},
                                {"iterations", p.info.iterations},
                                {"grad_norm", p.info.grad_norm},
                                {"lambda_at_bound", p.info.lambda_at_bound}};
  }
  out["types"] = types;
  return out;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd fit_plain_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& treated, int max_iter) {
  const Eigen::Index p = features.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd eta = features * beta;
    Eigen::VectorXd mu(eta.size()), w(eta.size());
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu(i) = expit(eta(i));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-12);
      ll += treated(i) * eta(i) - log1pexp(eta(i));
    }
    const Eigen::VectorXd score = features.transpose() * (treated - mu);
    const Eigen::MatrixXd info = features.transpose() * w.asDiagonal() * features;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-13) {
      throw FitError("propensity design is singular; check for constant or collinear features");
    }
    const Eigen::VectorXd step = ldlt.solve(score);
    beta += step;
    if (beta.lpNorm<Eigen::Infinity>() > 30.0) {
      throw FitError("perfect separation in the propensity model: coefficients diverge (max |beta| = " +
                     std::to_string(beta.lpNorm<Eigen::Infinity>()) + ")");
    }
    if (step.lpNorm<Eigen::Infinity>() < 1e-10 || std::abs(ll - prev_ll) < 1e-14 * (1.0 + std::abs(ll))) break;
    prev_ll = ll;
  }
  // a fit that drives some linear predictors to the extremes has found a
  // separating direction even if the iterations stalled before diverging
  const double extreme = (features * beta).lpNorm<Eigen::Infinity>();
  if (extreme > 25.0) {
    throw FitError("perfect separation in the propensity model: fitted probabilities reach 0 or 1 (max |linear "
                   "predictor| = " + std::to_string(extreme) + ")");
  }
  return beta;
}

namespace {

LogisticTypeParams fit_one(const std::vector<MixedLogitCluster>& clusters, const QuadratureRule& quad,
                           const LogisticFitOptions& opts, const std::string& label) {
  std::size_t units = 0;
  double treated_units = 0.0;
  for (const auto& c : clusters) {
    units += c.a.size();
    treated_units += c.a.treated_count();
  }
  if (treated_units == 0.0 || treated_units == static_cast<double>(units)) {
    throw FitError("propensity fit for " + label + " needs both treated and untreated units");
  }
  const Eigen::Index p = clusters.front().features.cols();
  Eigen::MatrixXd f(static_cast<Eigen::Index>(units), p);
  Eigen::VectorXd t(static_cast<Eigen::Index>(units));
  Eigen::Index r = 0;
  for (const auto& c : clusters) {
    for (Eigen::Index j = 0; j < c.features.rows(); ++j, ++r) {
      f.row(r) = c.features.row(j);
      t(r) = c.a[static_cast<std::size_t>(j)];
    }
  }
  Eigen::VectorXd beta0;
  try {
    beta0 = fit_plain_logistic(f, t);
  } catch (const FitError& e) {
    throw FitError("propensity fit for " + label + ": " + e.what());
  }

  const double n = static_cast<double>(clusters.size());
  Objective obj = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
    const double ll = mixed_logit_loglik(clusters, theta.head(p), theta(p), quad, opts.adaptive, grad);
    if (grad) *grad = -*grad / n;
    return -ll / n;
  };

  Eigen::VectorXd theta0(p + 1);
  theta0.head(p) = beta0;
  theta0(p) = 0.0;
  BfgsOptions bopts;
  bopts.grad_tol = opts.tol;
  bopts.max_iter = opts.max_iter;
  BfgsResult res = minimize_bfgs(obj, theta0, bopts);

  bool at_bound = false;
  if (res.x(p) > kMaxLogLambda) {
    // the random intercept variance collapses to zero; hold it at the bound
    Eigen::VectorXd start = res.x;
    start(p) = kMaxLogLambda;
    bopts.fixed.assign(static_cast<std::size_t>(p + 1), false);
    bopts.fixed[static_cast<std::size_t>(p)] = true;
    res = minimize_bfgs(obj, start, bopts);
    at_bound = true;
  }
  const double gnorm = at_bound ? res.gradient.head(p).lpNorm<Eigen::Infinity>()
                                : res.gradient.lpNorm<Eigen::Infinity>();
  if (res.x.head(p).lpNorm<Eigen::Infinity>() > 30.0) {
    throw FitError("perfect separation in the propensity model for " + label + ": coefficients diverge");
  }
  if (!res.converged) {
    std::ostringstream msg;
    msg << "propensity fit for " << label << " did not converge after " << res.iterations
        << " iterations (" << res.message << "); gradient norm " << gnorm << "; last iterate [";
    for (Eigen::Index i = 0; i < res.x.size(); ++i) msg << (i ? ", " : "") << res.x(i);
    msg << "]";
    throw FitError(msg.str());
  }
  LogisticTypeParams out;
  out.beta = res.x.head(p);
  out.lambda = std::exp(res.x(p));
  out.info.loglik = -res.value * n;
  out.info.iterations = res.iterations;
  out.info.grad_norm = gnorm;
  out.info.lambda_at_bound = at_bound;
  return out;
}

}  // namespace

LogisticMixedModel fit_logistic_mixed(const Dataset& data, const LogisticFitOptions& opts) {
  if (data.size() == 0) throw FitError("cannot fit a propensity model to an empty dataset");
  const QuadratureRule quad = gauss_hermite(opts.quad_nodes);
  std::map<int, std::vector<MixedLogitCluster>> groups;
  for (const auto& c : data.clusters()) {
    const int key = opts.pool_types ? 0 : c.type;
    groups[key].push_back({opts.features.build(c.x), c.a});
  }
  std::map<int, LogisticTypeParams> params;
  for (const auto& [key, clusters] : groups) {
    const std::string label = opts.pool_types ? "pooled types" : "type " + std::to_string(key);
    params[key] = fit_one(clusters, quad, opts, label);
  }
  if (opts.pool_types) {
    const LogisticTypeParams shared = params.at(0);
    params.clear();
    for (const auto& [k, info] : data.types()) params[k] = shared;
  }
  return LogisticMixedModel(std::move(params), opts.features, opts.quad_nodes, opts.adaptive);
}

}  // namespace netfx
