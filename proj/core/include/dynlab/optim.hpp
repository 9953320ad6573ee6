#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

namespace dynlab {

// Objective callback: returns f(x) and fills grad (same size as x).
using ObjectiveFn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;  // infinity norm
  int history = 10;
  int max_line_search = 50;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  double min_step = 1e-20;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;  // infinity norm at the returned point
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

// Minimizes f with limited-memory BFGS and a strong-Wolfe line search using
// cubic interpolation. The callback may throw to abort (e.g. divergence
// guards); exceptions propagate to the caller.
LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, Eigen::VectorXd x0,
                           const LbfgsOptions& options = {});

}  // namespace dynlab
