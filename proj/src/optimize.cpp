#include "netfx/optimize.hpp"

#include <cmath>
#include <limits>

namespace netfx {

namespace {

struct LinePoint {
  double alpha = 0.0;
  double f = 0.0;
  double slope = 0.0;
  Eigen::VectorXd grad;
};

// Strong-Wolfe search with bisection zoom. The approximate-Wolfe acceptance
// (Hager-Zhang) lets the search succeed once f differences sink into
// rounding noise near the optimum.
bool line_search(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir, double f0,
                 double d0, double alpha0, LinePoint& out) {
  constexpr double c1 = 1e-4;
  constexpr double c2 = 0.9;
  const double noise = 1e-12 * (1.0 + std::abs(f0));
  LinePoint lo{0.0, f0, d0, {}};
  double hi = std::numeric_limits<double>::infinity();
  double alpha = alpha0;
  LinePoint best;
  bool have_best = false;
  for (int it = 0; it < 60; ++it) {
    LinePoint p;
    p.alpha = alpha;
    p.grad.resize(x.size());
    p.f = f(x + alpha * dir, &p.grad);
    const bool finite = std::isfinite(p.f) && p.grad.allFinite();
    if (finite) p.slope = p.grad.dot(dir);
    const bool armijo = finite && p.f <= f0 + c1 * alpha * d0;
    const bool approx = finite && p.f <= f0 + noise && p.slope <= (2.0 * c1 - 1.0) * d0;
    const bool decrease = (armijo || approx) && (p.f <= lo.f + noise);
    if (!decrease) {
      hi = alpha;
    } else {
      if (!have_best || p.f < best.f) {
        best = p;
        have_best = true;
      }
      if (std::abs(p.slope) <= c2 * std::abs(d0)) {
        out = std::move(p);
        return true;
      }
      if (p.slope > 0.0) {
        hi = lo.alpha;
        lo = p;
      } else {
        lo = p;
      }
    }
    if (std::isinf(hi)) {
      alpha = 2.0 * lo.alpha;
    } else {
      alpha = 0.5 * (lo.alpha + hi);
      if (std::abs(hi - lo.alpha) < 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
    }
  }
  if (have_best) {
    out = std::move(best);
    return true;
  }
  return false;
}

}  // namespace

BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& opts) {
  const Eigen::Index n = x0.size();
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n && static_cast<std::size_t>(i) < opts.fixed.size(); ++i) {
    if (opts.fixed[static_cast<std::size_t>(i)]) mask(i) = 0.0;
  }

  BfgsResult res;
  res.x = std::move(x0);
  res.gradient.resize(n);
  res.value = f(res.x, &res.gradient);
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) {
    res.message = "objective not finite at the starting point";
    return res;
  }
  Eigen::VectorXd g = res.gradient.cwiseProduct(mask);
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;

  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }
    Eigen::VectorXd dir = -(h * g);
    dir = dir.cwiseProduct(mask);
    double d0 = g.dot(dir);
    if (!(d0 < 0.0)) {
      h.setIdentity();
      dir = -g;
      d0 = g.dot(dir);
    }
    double alpha0 = 1.0;
    const double big = dir.lpNorm<Eigen::Infinity>();
    if (big * alpha0 > opts.max_step) alpha0 = opts.max_step / big;

    LinePoint step;
    if (!line_search(f, res.x, dir, res.value, d0, alpha0, step)) {
      if (!h.isIdentity()) {
        h.setIdentity();
        continue;
      }
      res.message = "line search failed";
      return res;
    }
    const Eigen::VectorXd s = step.alpha * dir;
    const Eigen::VectorXd g_new = step.grad.cwiseProduct(mask);
    const Eigen::VectorXd y = g_new - g;
    res.x += s;
    res.value = step.f;
    res.gradient = step.grad;
    g = g_new;

    const double sy = s.dot(y);
    if (sy > 1e-14 * s.norm() * y.norm()) {
      if (!scaled) {
        h *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h * y;
      h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
  res.converged = g.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
  res.message = res.converged ? "gradient tolerance reached" : "iteration limit reached";
  return res;
}

}  // namespace netfx
