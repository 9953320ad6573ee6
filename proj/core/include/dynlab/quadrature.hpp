#pragma once

#include <Eigen/Core>

namespace dynlab {

// Gauss-Hermite rule rescaled for integration against the standard normal
// density: integral of f(z) phi(z) dz ~= sum_k weights[k] * f(nodes[k]),
// with weights summing to one.
struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

GaussHermiteRule gauss_hermite(int n);

// Tensor-product grid over `dim` dimensions; nodes is (n^dim x dim),
// weights sum to one. Row order is lexicographic in the 1-d rule.
struct QuadratureGrid {
  Eigen::MatrixXd nodes;
  Eigen::VectorXd weights;
};

QuadratureGrid tensor_grid(const GaussHermiteRule& rule, int dim);

}  // namespace dynlab
