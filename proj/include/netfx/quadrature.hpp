#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace netfx {

/// Gauss-Hermite rule for the weight exp(-t^2):
/// integral exp(-t^2) f(t) dt ~= sum_i weights(i) f(nodes(i)).
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  std::size_t order() const { return static_cast<std::size_t>(nodes.size()); }
};

QuadratureRule gauss_hermite(std::size_t order);

// Shared, lazily built rule; safe to call from several threads.
const QuadratureRule& cached_gauss_hermite(std::size_t order);

}  // namespace netfx
