#include "netfx/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "netfx/errors.hpp"

namespace netfx {

namespace {

std::vector<std::size_t> all_columns(std::size_t d) {
  std::vector<std::size_t> cols(d);
  for (std::size_t c = 0; c < d; ++c) cols[c] = c;
  return cols;
}

double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }
double inv_softplus(double r) { return r > 30.0 ? r : std::log(std::expm1(r)); }
double expit(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_columns(const std::vector<std::size_t>& cols, std::size_t d) {
  for (auto c : cols) {
    if (c >= d) throw ConfigError("design column " + std::to_string(c) + " out of range");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t DesignSpec::width(std::size_t d) const {
  const std::size_t own_n = own ? own->size() : d;
  const std::size_t peer_n = peer ? peer->size() : d;
  return 2 + (peer_treatment ? 1 : 0) + 2 * interactions.size() + own_n + peer_n;
}

Eigen::MatrixXd DesignSpec::build(const TreatmentVector& a, const Eigen::MatrixXd& x) const {
  const auto d = static_cast<std::size_t>(x.cols());
  const auto oc = own ? *own : all_columns(d);
  const auto pc = peer ? *peer : all_columns(d);
  check_columns(oc, d);
  check_columns(pc, d);
  check_columns(interactions, d);
  const Eigen::Index m = x.rows();
  const int total_a = a.treated_count();
  const Eigen::RowVectorXd total_x = x.colwise().sum();
  Eigen::MatrixXd h(m, static_cast<Eigen::Index>(width(d)));
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const double aj = a[ju];
    const double peers = total_a - a[ju];
    Eigen::Index c = 0;
    h(j, c++) = 1.0;
    h(j, c++) = aj;
    if (peer_treatment) h(j, c++) = peers;
    for (auto col : interactions) h(j, c++) = aj * x(j, static_cast<Eigen::Index>(col));
    for (auto col : interactions) h(j, c++) = peers * x(j, static_cast<Eigen::Index>(col));
    for (auto col : oc) h(j, c++) = x(j, static_cast<Eigen::Index>(col));
    for (auto col : pc) {
      const auto cc = static_cast<Eigen::Index>(col);
      h(j, c++) = total_x(cc) - x(j, cc);
    }
  }
  return h;
}

std::vector<std::string> DesignSpec::column_names(const std::vector<std::string>& covariate_names) const {
  const std::size_t d = covariate_names.size();
  auto name = [&](std::size_t c) { return c < d ? covariate_names[c] : "x" + std::to_string(c + 1); };
  std::vector<std::string> out{"(intercept)", "a"};
  if (peer_treatment) out.push_back("peer_a");
  for (auto c : interactions) out.push_back("a:" + name(c));
  for (auto c : interactions) out.push_back("peer_a:" + name(c));
  for (auto c : own ? *own : all_columns(d)) out.push_back(name(c));
  for (auto c : peer ? *peer : all_columns(d)) out.push_back("peer_" + name(c));
  return out;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd cs_matrix(double eta, double rho, std::size_t m) {
  const auto n = static_cast<Eigen::Index>(m);
  return Eigen::MatrixXd::Identity(n, n) / eta + Eigen::MatrixXd::Constant(n, n, rho);
}

Eigen::MatrixXd cs_inverse(double eta, double rho, std::size_t m) {
  const auto n = static_cast<Eigen::Index>(m);
  const double denom = 1.0 + static_cast<double>(m) * rho * eta;
  if (!(eta > 0.0) || !(denom > 0.0)) throw DomainError("covariance is not positive definite");
  return eta * Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, rho * eta * eta / denom);
}

double cs_logdet(double eta, double rho, std::size_t m) {
  const double md = static_cast<double>(m);
  const double denom = 1.0 + md * rho * eta;
  if (!(eta > 0.0) || !(denom > 0.0)) throw DomainError("covariance is not positive definite");
  return -md * std::log(eta) + std::log(denom);
}

namespace {

// Log-likelihood and (eta, rho) derivatives from the residual summaries
// ee = e'e and ss = (1'e)^2 of n clusters of size m.
double cs_loglik_stats(double n, double m, double ee, double ss, double eta, double rho, double* d_eta,
                       double* d_rho) {
  const double d = 1.0 + m * rho * eta;
  const double ll = -0.5 * n * (m * std::log(2.0 * std::numbers::pi) - m * std::log(eta) + std::log(d)) -
                    0.5 * (eta * ee - rho * eta * eta / d * ss);
  if (d_eta) {
    *d_eta = -0.5 * ee + 0.5 * rho * eta * (2.0 + m * rho * eta) / (d * d) * ss + n * m / (2.0 * eta) -
             n * m * rho / (2.0 * d);
  }
  if (d_rho) *d_rho = eta * eta / (2.0 * d * d) * ss - n * m * eta / (2.0 * d);
  return ll;
}

}  // namespace

double cs_loglik(const Eigen::VectorXd& resid, double eta, double rho, double* d_eta, double* d_rho) {
  const double m = static_cast<double>(resid.size());
  if (!(eta > 0.0) || !(1.0 + m * rho * eta > 0.0)) throw DomainError("covariance is not positive definite");
  const double s = resid.sum();
  return cs_loglik_stats(1.0, m, resid.squaredNorm(), s * s, eta, rho, d_eta, d_rho);
}

double lmm_loglik(const std::vector<LinearMixedCluster>& clusters, const Eigen::VectorXd& beta, double eta,
                  double rho, Eigen::VectorXd* grad) {
  const Eigen::Index q = beta.size();
  if (grad) grad->setZero(q + 2);
  double total = 0.0;
  for (const auto& c : clusters) {
    const Eigen::VectorXd resid = c.y - c.design * beta;
    double de = 0.0, dr = 0.0;
    total += cs_loglik(resid, eta, rho, grad ? &de : nullptr, grad ? &dr : nullptr);
    if (grad) {
      const double m = static_cast<double>(resid.size());
      const double cc = rho * eta * eta / (1.0 + m * rho * eta);
      const Eigen::VectorXd sinv_e = eta * resid - Eigen::VectorXd::Constant(resid.size(), cc * resid.sum());
      grad->head(q) += c.design.transpose() * sinv_e;
      (*grad)(q) += de;
      (*grad)(q + 1) += dr;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------

LinearMixedModel::LinearMixedModel(std::map<int, LinearTypeParams> params, DesignSpec design)
    : params_(std::move(params)), design_(std::move(design)) {
  for (const auto& [k, p] : params_) {
    if (!(p.eta > 0.0)) throw DomainError("residual precision must be positive for type " + std::to_string(k));
  }
}

const LinearTypeParams& LinearMixedModel::params(int k) const {
  auto it = params_.find(k);
  if (it == params_.end()) throw ConfigError("outcome model has no parameters for type " + std::to_string(k));
  return it->second;
}

Eigen::VectorXd LinearMixedModel::predict(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const {
  const auto& p = params(k);
  const Eigen::MatrixXd h = design_.build(a, x);
  if (h.cols() != p.beta.size()) {
    throw ConfigError("design width does not match the coefficient vector for type " + std::to_string(k));
  }
  return h * p.beta;
}

nlohmann::json LinearMixedModel::summary() const {
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [k, p] : params_) {
    types[std::to_string(k)] = {{"beta", std::vector<double>(p.beta.data(), p.beta.data() + p.beta.size())},
                                {"eta", p.eta},
                                {"rho", p.rho},
                                {"loglik", p.info.loglik},
                                {"iterations", p.info.iterations},
                                {"grad_norm", p.info.grad_norm}};
  }
  return {{"kind", "linear_mixed"}, {"types", types}};
}

// ---------------------------------------------------------------------------

namespace {

struct Profile {
  double ll = 0.0;
  double d_eta = 0.0;
  double d_rho = 0.0;
  Eigen::VectorXd beta;
};

// Clusters of one size stacked row-wise.
struct SizeGroup {
  double n = 0.0;
  Eigen::MatrixXd h;
  Eigen::VectorXd y;
};

class LmmProblem {
 public:
  LmmProblem(const std::vector<LinearMixedCluster>& clusters, Eigen::Index q) : q_(q) {
    std::map<std::size_t, std::vector<const LinearMixedCluster*>> by_size;
    for (const auto& c : clusters) by_size[static_cast<std::size_t>(c.y.size())].push_back(&c);
    for (const auto& [m, list] : by_size) {
      SizeGroup g;
      const auto mi = static_cast<Eigen::Index>(m);
      g.n = static_cast<double>(list.size());
      g.h.resize(mi * static_cast<Eigen::Index>(list.size()), q);
      g.y.resize(g.h.rows());
      Eigen::Index r = 0;
      for (const auto* c : list) {
        g.h.middleRows(r, mi) = c->design;
        g.y.segment(r, mi) = c->y;
        r += mi;
      }
      rows_ += g.h.rows();
      n_ += g.n;
      max_m_ = std::max(max_m_, m);
      groups_[m] = std::move(g);
    }
  }

  double n() const { return n_; }
  std::size_t max_m() const { return max_m_; }

  // Generalised least squares by QR of the whitened design; S^{-1/2} is
  // proportional to I - d 11' with (1 - d m)^2 = 1 - c m.
  Eigen::VectorXd gls(double eta, double rho) const {
    Eigen::MatrixXd wh(rows_, q_);
    Eigen::VectorXd wy(rows_);
    Eigen::Index r = 0;
    for (const auto& [m, g] : groups_) {
      const double md = static_cast<double>(m);
      const double c = rho * eta / (1.0 + md * rho * eta);
      const double d = (1.0 - std::sqrt(1.0 - c * md)) / md;
      const auto mi = static_cast<Eigen::Index>(m);
      for (Eigen::Index s = 0; s < g.h.rows(); s += mi) {
        const Eigen::RowVectorXd hs = g.h.middleRows(s, mi).colwise().sum();
        const double ys = g.y.segment(s, mi).sum();
        wh.middleRows(r + s, mi) = g.h.middleRows(s, mi).rowwise() - d * hs;
        wy.segment(r + s, mi) = g.y.segment(s, mi).array() - d * ys;
      }
      r += g.h.rows();
    }
    return wh.colPivHouseholderQr().solve(wy);
  }

  Profile evaluate(const Eigen::VectorXd& beta, double eta, double rho) const {
    Profile p;
    p.beta = beta;
    for (const auto& [m, g] : groups_) {
      const Eigen::VectorXd resid = g.y - g.h * beta;
      const auto mi = static_cast<Eigen::Index>(m);
      double ss = 0.0;
      for (Eigen::Index s = 0; s < resid.size(); s += mi) {
        const double t = resid.segment(s, mi).sum();
        ss += t * t;
      }
      double de = 0.0, dr = 0.0;
      p.ll += cs_loglik_stats(g.n, static_cast<double>(m), resid.squaredNorm(), ss, eta, rho, &de, &dr);
      p.d_eta += de;
      p.d_rho += dr;
    }
    return p;
  }

  Profile profile(double eta, double rho) const { return evaluate(gls(eta, rho), eta, rho); }

 private:
  Eigen::Index q_;
  std::map<std::size_t, SizeGroup> groups_;
  Eigen::Index rows_ = 0;
  double n_ = 0.0;
  std::size_t max_m_ = 0;
};

struct Natural {
  double eta;
  double rho;
};

void check_rank(const std::vector<LinearMixedCluster>& clusters, Eigen::Index q,
                const std::vector<std::string>& names, const std::string& label) {
  Eigen::Index rows = 0;
  for (const auto& c : clusters) rows += c.design.rows();
  Eigen::MatrixXd stacked(rows, q);
  Eigen::Index r = 0;
  for (const auto& c : clusters) {
    stacked.middleRows(r, c.design.rows()) = c.design;
    r += c.design.rows();
  }
  // scale columns so the rank decision does not depend on units
  Eigen::VectorXd norms = stacked.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < q; ++j) {
    if (norms(j) > 0.0) stacked.col(j) /= norms(j);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stacked);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank == q) return;
  std::ostringstream msg;
  msg << "outcome design for " << label << " is rank deficient (rank " << rank << " of " << q
      << "); collinear columns: ";
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index i = rank; i < q; ++i) {
    const auto col = static_cast<std::size_t>(perm(i));
    msg << (i > rank ? ", " : "") << (col < names.size() ? names[col] : std::to_string(col));
  }
  throw FitError(msg.str());
}

LinearTypeParams fit_one(const std::vector<LinearMixedCluster>& clusters, const std::vector<std::string>& names,
                         const LinearFitOptions& opts, const std::string& label) {
  if (clusters.size() < 2) throw FitError("outcome fit for " + label + " needs at least two clusters");
  const Eigen::Index q = clusters.front().design.cols();
  check_rank(clusters, q, names, label);
  LmmProblem prob(clusters, q);
  const double n = prob.n();
  const double mmax = static_cast<double>(prob.max_m());

  // ordinary least squares start
  const Eigen::VectorXd beta_ols = prob.gls(1.0, 0.0);
  double ee = 0.0, ss = 0.0, units = 0.0, pairs = 0.0;
  for (const auto& c : clusters) {
    const Eigen::VectorXd r = c.y - c.design * beta_ols;
    const double m = static_cast<double>(r.size());
    ee += r.squaredNorm();
    ss += r.sum() * r.sum();
    units += m;
    pairs += m * (m - 1.0);
  }
  const double sigma2 = std::max(ee / units, 1e-12);

  LinearTypeParams out;
  if (prob.max_m() == 1) {
    // the intercept variance is not identified from singleton clusters
    out.eta = 1.0 / sigma2;
    out.rho = 0.0;
    out.beta = beta_ols;
    const Profile p = prob.evaluate(out.beta, out.eta, out.rho);
    out.info.loglik = p.ll;
    out.info.grad_norm = std::abs(p.d_eta) / n;
    return out;
  }
  const double cov = (ss - ee) / pairs;
  const double rho0 = std::clamp(cov, 0.05 * sigma2, 0.9 * sigma2);
  const double eta0 = 1.0 / (sigma2 - rho0);

  auto natural = [&](const Eigen::Vector2d& t) {
    const double eta = std::exp(t(0));
    return Natural{eta, softplus(t(1)) - 1.0 / (mmax * eta)};
  };
  auto objective = [&](const Eigen::Vector2d& t, Eigen::Vector2d* g, Profile* prof) {
    const Natural v = natural(t);
    const Profile p = prob.profile(v.eta, v.rho);
    if (g) {
      (*g)(0) = (v.eta * p.d_eta + p.d_rho / (mmax * v.eta)) / n;
      (*g)(1) = p.d_rho * expit(t(1)) / n;
    }
    if (prof) *prof = p;
    return p.ll / n;
  };

  Eigen::Vector2d t(std::log(eta0), inv_softplus(rho0 + 1.0 / (mmax * eta0)));
  Eigen::Vector2d g;
  Profile prof;
  double f = objective(t, &g, &prof);
  int it = 0;
  auto natural_grad = [&](const Profile& p) { return std::max(std::abs(p.d_eta), std::abs(p.d_rho)) / n; };
  for (; it < opts.max_iter; ++it) {
    if (natural_grad(prof) <= opts.tol) break;
    // Hessian by central differences of the analytic gradient
    Eigen::Matrix2d hess;
    const double h = 1e-5;
    for (int i = 0; i < 2; ++i) {
      Eigen::Vector2d tp = t, tm = t, gp, gm;
      tp(i) += h;
      tm(i) -= h;
      objective(tp, &gp, nullptr);
      objective(tm, &gm, nullptr);
      hess.col(i) = (gp - gm) / (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(hess);
    Eigen::Vector2d step;
    if (eig.eigenvalues().maxCoeff() < 0.0) {
      step = -hess.ldlt().solve(g);
    } else {
      // ascend along a regularised direction when the surface is not concave
      const double shift = eig.eigenvalues().maxCoeff() + 1.0;
      step = -(hess - shift * Eigen::Matrix2d::Identity()).ldlt().solve(g);
    }
    const double big = step.lpNorm<Eigen::Infinity>();
    if (big > 2.0) step *= 2.0 / big;
    double scale = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt) {
      const Eigen::Vector2d tn = t + scale * step;
      Eigen::Vector2d gn;
      Profile pn;
      const double fn = objective(tn, &gn, &pn);
      if (std::isfinite(fn) && fn >= f - 1e-15 * std::abs(f)) {
        t = tn;
        f = fn;
        g = gn;
        prof = pn;
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!moved) break;
  }
  const double gnorm = natural_grad(prof);
  if (gnorm > opts.tol) {
    const Natural v = natural(t);
    std::ostringstream msg;
    msg << "outcome fit for " << label << " did not converge after " << it << " iterations; gradient norm "
        << gnorm << " at eta=" << v.eta << ", rho=" << v.rho;
    throw FitError(msg.str());
  }
  const Natural v = natural(t);
  out.beta = prof.beta;
  out.eta = v.eta;
  out.rho = v.rho;
  out.info.loglik = prof.ll;
  out.info.iterations = it;
  out.info.grad_norm = gnorm;
  return out;
}

}  // namespace

LinearMixedModel fit_linear_mixed(const Dataset& data, const LinearFitOptions& opts) {
  if (data.size() == 0) throw FitError("cannot fit an outcome model to an empty dataset");
  std::map<int, std::vector<LinearMixedCluster>> groups;
  for (const auto& c : data.clusters()) {
    const int key = opts.pool_types ? 0 : c.type;
    groups[key].push_back({opts.design.build(c.a, c.x), c.y});
  }
  const auto names = opts.design.column_names(data.covariate_names());
  std::map<int, LinearTypeParams> params;
  for (const auto& [key, clusters] : groups) {
    const std::string label = opts.pool_types ? "pooled types" : "type " + std::to_string(key);
    params[key] = fit_one(clusters, names, opts, label);
  }
  if (opts.pool_types) {
    const LinearTypeParams shared = params.at(0);
    params.clear();
    for (const auto& [k, info] : data.types()) params[k] = shared;
  }
  return LinearMixedModel(std::move(params), opts.design);
}

}  // namespace netfx
