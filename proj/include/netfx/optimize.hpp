#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace netfx {

/// Objective returning f(x) and, when grad is non-null, writing the gradient.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BfgsOptions {
  double grad_tol = 1e-8;  // infinity norm
  int max_iter = 200;
  /// Coordinates held at their starting value.
  std::vector<bool> fixed;
  /// Longest allowed step in any single coordinate.
  double max_step = 5.0;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// Quasi-Newton minimization with a strong-Wolfe line search.
BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& opts = {});

}  // namespace netfx
