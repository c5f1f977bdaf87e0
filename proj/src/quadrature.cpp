#include "netfx/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "netfx/errors.hpp"

namespace netfx {

// Newton iteration on the orthonormal Hermite recurrence with the usual
// asymptotic starting values for the largest roots.
QuadratureRule gauss_hermite(std::size_t order) {
  if (order == 0) throw DomainError("quadrature order must be at least 1");
  const int n = static_cast<int>(order);
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  Eigen::VectorXd x(n), w(n);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x(0);
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x(1);
    } else {
      z = 2.0 * z - x(i - 2);
    }
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt(static_cast<double>(j - 1) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) {
        // one more pass so pp matches the converged root
        p1 = pim4;
        p2 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt(static_cast<double>(j - 1) / j) * p3;
        }
        pp = std::sqrt(2.0 * n) * p2;
        break;
      }
    }
    x(i) = z;
    x(n - 1 - i) = -z;
    w(i) = 2.0 / (pp * pp);
    w(n - 1 - i) = w(i);
  }
  if (n % 2 == 1) x(m - 1) = 0.0;
  // ascending order
  QuadratureRule rule{x.reverse(), w.reverse()};
  return rule;
}

const QuadratureRule& cached_gauss_hermite(std::size_t order) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<QuadratureRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[order];
  if (!slot) slot = std::make_unique<QuadratureRule>(gauss_hermite(order));
  return *slot;
}

}  // namespace netfx
