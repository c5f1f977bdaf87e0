#include <algorithm>
#include <cmath>
#include <limits>

#include "netfx/errors.hpp"
#include "netfx/outcome.hpp"

namespace netfx {

double nw_bandwidth(double scale, double sigma, std::size_t n, std::size_t p) {
  if (!(scale > 0.0) || !(sigma > 0.0) || n == 0) throw DomainError("bandwidth rule needs positive inputs");
  return scale * sigma * std::pow(static_cast<double>(n), -1.0 / (4.0 + static_cast<double>(p)));
}

void KernelModel::features(const TreatmentVector& a, const Eigen::MatrixXd& x, std::size_t j, Eigen::VectorXd& cont,
                           Eigen::VectorXd& disc) const {
  const std::size_t m = a.size();
  const std::size_t peers = m - 1;
  const std::size_t nc = cont_cols_.size();
  const std::size_t nd = disc_cols_.size();
  const auto ji = static_cast<Eigen::Index>(j);
  if (symmetrize_) {
    cont.resize(static_cast<Eigen::Index>(nc + (peers > 0 ? nc : 0)));
    disc.resize(static_cast<Eigen::Index>(1 + nd + (peers > 0 ? nd : 0)));
  } else {
    cont.resize(static_cast<Eigen::Index>(nc * m));
    disc.resize(static_cast<Eigen::Index>(peers + nd * m));
  }
  Eigen::Index ci = 0, di = 0;
  for (auto c : cont_cols_) cont(ci++) = x(ji, static_cast<Eigen::Index>(c));
  if (symmetrize_) {
    disc(di++) = a.peers_treated(j);
  } else {
    for (std::size_t l = 0; l < m; ++l) {
      if (l != j) disc(di++) = a[l];
    }
  }
  for (auto c : disc_cols_) disc(di++) = x(ji, static_cast<Eigen::Index>(c));
  if (peers == 0) return;
  if (symmetrize_) {
    for (auto c : cont_cols_) {
      const auto cc = static_cast<Eigen::Index>(c);
      cont(ci++) = (x.col(cc).sum() - x(ji, cc)) / static_cast<double>(peers);
    }
    for (auto c : disc_cols_) {
      const auto cc = static_cast<Eigen::Index>(c);
      disc(di++) = (x.col(cc).sum() - x(ji, cc)) / static_cast<double>(peers);
    }
  } else {
    for (std::size_t l = 0; l < m; ++l) {
      if (l == j) continue;
      for (auto c : cont_cols_) cont(ci++) = x(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(c));
    }
    for (std::size_t l = 0; l < m; ++l) {
      if (l == j) continue;
      for (auto c : disc_cols_) disc(di++) = x(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(c));
    }
  }
}

Eigen::VectorXd KernelModel::predict(const TreatmentVector& a, const Eigen::MatrixXd& x, int k) const {
  const std::size_t m = a.size();
  Eigen::VectorXd out(static_cast<Eigen::Index>(m));
  Eigen::VectorXd cont, disc;
  for (std::size_t j = 0; j < m; ++j) {
    const auto key = std::make_pair(k, a[j]);
    auto cell = cells_.find(key);
    if (cell == cells_.end()) {
      // nothing in the fold shares (a_j, k): use any unit of the type
      fallbacks_->fetch_add(1);
      double sum = 0.0, cnt = 0.0;
      for (const auto& [ck, mean] : cell_mean_) {
        if (ck.first != k) continue;
        const double n = static_cast<double>(cells_.at(ck).size());
        sum += mean * n;
        cnt += n;
      }
      if (cnt == 0.0) throw EstimationError("kernel outcome model has no training clusters of type " + std::to_string(k));
      out(static_cast<Eigen::Index>(j)) = sum / cnt;
      continue;
    }
    features(a, x, j, cont, disc);
    double hd = h_d_;
    double value = std::numeric_limits<double>::quiet_NaN();
    for (int attempt = 0; attempt < 2 && std::isnan(value); ++attempt) {
      const double log_hd = hd > 0.0 ? std::log(hd) : -std::numeric_limits<double>::infinity();
      double top = -std::numeric_limits<double>::infinity();
      double num = 0.0, den = 0.0;
      for (const auto& u : cell->second) {
        if (u.cont.size() != cont.size() || u.disc.size() != disc.size()) continue;
        double lw = 0.0;
        if (cont.size() > 0) lw = -0.5 * (u.cont - cont).squaredNorm() / (h_c_ * h_c_);
        int mism = 0;
        for (Eigen::Index i = 0; i < disc.size(); ++i) mism += u.disc(i) != disc(i);
        if (mism > 0) lw += mism * log_hd;
        if (lw == -std::numeric_limits<double>::infinity()) continue;
        if (lw > top) {
          const double r = std::exp(top - lw);
          num *= r;
          den *= r;
          top = lw;
        }
        const double w = std::exp(lw - top);
        num += w * u.y;
        den += w;
      }
      if (den > 0.0) {
        value = num / den;
      } else {
        hd = std::sqrt(hd);
      }
    }
    if (std::isnan(value)) {
      fallbacks_->fetch_add(1);
      value = cell_mean_.at(key);
    }
    out(static_cast<Eigen::Index>(j)) = value;
  }
  return out;
}

nlohmann::json KernelModel::summary() const {
  return {{"kind", "kernel"},
          {"h_c", h_c_},
          {"h_d", h_d_},
          {"continuous_dims", p_},
          {"continuous_columns", cont_cols_},
          {"discrete_columns", disc_cols_},
          {"symmetrize_peers", symmetrize_},
          {"fallbacks", fallbacks()}};
}

KernelModel fit_nw(const Dataset& data, const KernelOptions& opts) {
  if (data.size() == 0) throw FitError("cannot fit a kernel outcome model to an empty fold");
  if (!(opts.bandwidth_scale > 0.0)) throw ConfigError("bandwidth_scale must be positive");
  const std::size_t d = data.covariate_dim();
  KernelModel model;
  model.symmetrize_ = opts.symmetrize_peers;

  if (opts.continuous) {
    model.cont_cols_ = *opts.continuous;
    for (auto c : model.cont_cols_) {
      if (c >= d) throw ConfigError("continuous column " + std::to_string(c) + " out of range");
    }
  } else {
    for (std::size_t c = 0; c < d; ++c) {
      bool binary = true;
      for (const auto& cl : data.clusters()) {
        const auto col = cl.x.col(static_cast<Eigen::Index>(c));
        if (!(col.array() == 0.0 || col.array() == 1.0).all()) {
          binary = false;
          break;
        }
      }
      if (!binary) model.cont_cols_.push_back(c);
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (std::find(model.cont_cols_.begin(), model.cont_cols_.end(), c) == model.cont_cols_.end()) {
      model.disc_cols_.push_back(c);
    }
  }

  // pooled standard deviation of the continuous columns
  double sigma = 1.0;
  if (!model.cont_cols_.empty()) {
    double var_sum = 0.0;
    for (auto c : model.cont_cols_) {
      double s = 0.0, s2 = 0.0, n = 0.0;
      for (const auto& cl : data.clusters()) {
        const auto col = cl.x.col(static_cast<Eigen::Index>(c));
        s += col.sum();
        s2 += col.squaredNorm();
        n += static_cast<double>(col.size());
      }
      var_sum += n > 1.0 ? (s2 - s * s / n) / (n - 1.0) : 0.0;
    }
    sigma = std::sqrt(var_sum / static_cast<double>(model.cont_cols_.size()));
    if (!(sigma > 0.0)) sigma = 1.0;
  }
  std::size_t p = 0;
  for (const auto& [k, info] : data.types()) {
    const std::size_t peers = info.size > 0 ? info.size - 1 : 0;
    const std::size_t peer_dims = model.symmetrize_ ? (peers > 0 ? 1 : 0) : peers;
    p = std::max(p, model.cont_cols_.size() * (1 + peer_dims));
  }
  model.p_ = p;
  const double rule = nw_bandwidth(opts.bandwidth_scale, sigma, data.size(), p);
  model.h_c_ = opts.h_c.value_or(rule);
  model.h_d_ = opts.h_d.value_or(std::min(1.0, rule * rule));
  if (!(model.h_c_ > 0.0)) throw ConfigError("continuous bandwidth must be positive");
  if (!(model.h_d_ >= 0.0 && model.h_d_ <= 1.0)) throw ConfigError("discrete bandwidth must lie in [0,1]");

  std::map<std::pair<int, int>, std::pair<double, double>> sums;
  for (const auto& cl : data.clusters()) {
    for (std::size_t j = 0; j < cl.size(); ++j) {
      KernelModel::Unit u;
      u.type = cl.type;
      u.a = cl.a[j];
      u.y = cl.y(static_cast<Eigen::Index>(j));
      model.features(cl.a, cl.x, j, u.cont, u.disc);
      const auto key = std::make_pair(u.type, u.a);
      sums[key].first += u.y;
      sums[key].second += 1.0;
      model.cells_[key].push_back(std::move(u));
    }
  }
  for (const auto& [key, s] : sums) model.cell_mean_[key] = s.first / s.second;
  return model;
}

}  // namespace netfx
