#pragma once

#include <atomic>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "netfx/data.hpp"

namespace netfx {

/// Outcome regression g(a, x, k): conditional means of every unit's outcome
/// given the whole treatment vector.
class OutcomeModel {
 public:
  virtual ~OutcomeModel() = default;
  virtual Eigen::VectorXd predict(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const = 0;
  virtual std::string kind() const = 0;
  virtual nlohmann::json summary() const = 0;
};

class ZeroOutcomeModel final : public OutcomeModel {
 public:
  Eigen::VectorXd predict(const TreatmentVector& a, const Eigen::MatrixXd&, int) const override {
    return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(a.size()));
  }
  std::string kind() const override { return "zero"; }
  nlohmann::json summary() const override { return {{"kind", "zero"}}; }
};

/// Unit-level design row
///   [1, a_j, sum_{l!=j} a_l, a_j x_jc, (sum_{l!=j} a_l) x_jc, x_j[own], sum_{l!=j} x_l[peer]]
/// with interaction columns c taken from `interactions`. Unset own/peer
/// lists mean every covariate column.
struct DesignSpec {
  bool peer_treatment = true;
  std::vector<std::size_t> interactions;
  std::optional<std::vector<std::size_t>> own;
  std::optional<std::vector<std::size_t>> peer;

  std::size_t width(std::size_t d) const;
  Eigen::MatrixXd build(const TreatmentVector& a, const Eigen::MatrixXd& x) const;
  std::vector<std::string> column_names(const std::vector<std::string>& covariate_names) const;
};

struct LinearFitInfo {
  double loglik = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};

struct LinearTypeParams {
  Eigen::VectorXd beta;
  double eta = 1.0;  // residual precision
  double rho = 0.0;  // random-intercept variance
  LinearFitInfo info;
};

/// Linear mixed model with compound-symmetry covariance
/// S = I / eta + rho 11'.
class LinearMixedModel final : public OutcomeModel {
 public:
  LinearMixedModel(std::map<int, LinearTypeParams> params, DesignSpec design);

  Eigen::VectorXd predict(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const override;
  std::string kind() const override { return "linear_mixed"; }
  nlohmann::json summary() const override;

  const LinearTypeParams& params(int k) const;
  const std::map<int, LinearTypeParams>& all_params() const { return params_; }
  const DesignSpec& design() const { return design_; }

 private:
  std::map<int, LinearTypeParams> params_;
  DesignSpec design_;
};

/// Compound-symmetry covariance I / eta + rho 11' of size m.
Eigen::MatrixXd cs_matrix(double eta, double rho, std::size_t m);
/// Closed-form inverse eta I - rho eta^2 / (1 + m rho eta) 11'.
Eigen::MatrixXd cs_inverse(double eta, double rho, std::size_t m);
/// log det S = -m log eta + log(1 + m rho eta).
double cs_logdet(double eta, double rho, std::size_t m);

/// Gaussian log-likelihood of one residual vector with covariance
/// cs_matrix(eta, rho, m); optionally writes (d/d eta, d/d rho).
double cs_loglik(const Eigen::VectorXd& resid, double eta, double rho, double* d_eta = nullptr,
                 double* d_rho = nullptr);

struct LinearMixedCluster {
  Eigen::MatrixXd design;
  Eigen::VectorXd y;
};

/// Sum of cluster log-likelihoods; grad is (d beta, d eta, d rho).
double lmm_loglik(const std::vector<LinearMixedCluster>& clusters, const Eigen::VectorXd& beta, double eta,
                  double rho, Eigen::VectorXd* grad = nullptr);

struct LinearFitOptions {
  DesignSpec design;
  double tol = 1e-8;
  int max_iter = 100;
  bool pool_types = false;
};

LinearMixedModel fit_linear_mixed(const Dataset& data, const LinearFitOptions& opts = {});

/// Mixed-data Nadaraya-Watson regression trained on one fold: exact match on
/// (a_j, k), Gaussian kernel on continuous own/peer covariates and the
/// mismatch kernel h_d^{1(differ)} on peer treatments and discrete covariates.
struct KernelOptions {
  double bandwidth_scale = 1.0;
  bool symmetrize_peers = false;
  /// Covariate columns treated as continuous; unset means every column that
  /// is not entirely 0/1 in the training data.
  std::optional<std::vector<std::size_t>> continuous;
  /// Overrides for the bandwidth rule.
  std::optional<double> h_c;
  std::optional<double> h_d;
};

class KernelModel final : public OutcomeModel {
 public:
  Eigen::VectorXd predict(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const override;
  std::string kind() const override { return "kernel"; }
  nlohmann::json summary() const override;

  double h_c() const { return h_c_; }
  double h_d() const { return h_d_; }
  std::size_t continuous_dims() const { return p_; }
  std::size_t fallbacks() const { return fallbacks_->load(); }

 private:
  friend KernelModel fit_nw(const Dataset& data, const KernelOptions& opts);

  struct Unit {
    int type;
    int a;
    double y;
    Eigen::VectorXd cont;  // continuous features (own, then peers)
    Eigen::VectorXd disc;  // discrete features (peer treatments, own, then peers)
  };

  void features(const TreatmentVector& a, const Eigen::MatrixXd& x, std::size_t j, Eigen::VectorXd& cont,
                Eigen::VectorXd& disc) const;

  std::map<std::pair<int, int>, std::vector<Unit>> cells_;  // keyed by (type, own treatment)
  std::map<std::pair<int, int>, double> cell_mean_;
  std::vector<std::size_t> cont_cols_;
  std::vector<std::size_t> disc_cols_;
  bool symmetrize_ = false;
  double h_c_ = 1.0;
  double h_d_ = 1.0;
  std::size_t p_ = 0;
  std::shared_ptr<std::atomic<std::size_t>> fallbacks_ = std::make_shared<std::atomic<std::size_t>>(0);
};

/// h_c = scale * sigma * n^{-1/(4+p)}.
double nw_bandwidth(double scale, double sigma, std::size_t n, std::size_t p);

KernelModel fit_nw(const Dataset& data, const KernelOptions& opts = {});

}  // namespace netfx
