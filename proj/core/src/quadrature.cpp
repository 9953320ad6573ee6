#include "dynlab/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace dynlab {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix of the (physicists')
// Hermite recurrence, weights come from the first eigenvector components.
GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: need at least 1 node");

  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    double off = std::sqrt(k / 2.0);
    jacobi(k, k - 1) = off;
    jacobi(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("gauss_hermite: eigen decomposition failed");

  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    // Physicists' nodes x and weights w with sum w = sqrt(pi); rescale to the
    // N(0,1) weight: z = sqrt(2) x, weight = w / sqrt(pi).
    double v0 = solver.eigenvectors()(0, k);
    rule.nodes[k] = std::sqrt(2.0) * solver.eigenvalues()[k];
    rule.weights[k] = v0 * v0;
  }
  rule.weights /= rule.weights.sum();

  // Symmetrize: the rule is exactly symmetric in theory; enforce it so
  // downstream results do not depend on eigen solver rounding.
  for (int k = 0; k < n / 2; ++k) {
    int m = n - 1 - k;
    double mag = 0.5 * (rule.nodes[m] - rule.nodes[k]);
    rule.nodes[k] = -mag;
    rule.nodes[m] = mag;
    double w = 0.5 * (rule.weights[k] + rule.weights[m]);
    rule.weights[k] = w;
    rule.weights[m] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

QuadratureGrid tensor_grid(const GaussHermiteRule& rule, int dim) {
  if (dim < 1) throw std::invalid_argument("tensor_grid: dim must be positive");
  const int n = static_cast<int>(rule.nodes.size());
  long total = 1;
  for (int d = 0; d < dim; ++d) total *= n;

  QuadratureGrid grid;
  grid.nodes.resize(total, dim);
  grid.weights.resize(total);
  for (long idx = 0; idx < total; ++idx) {
    long rem = idx;
    double w = 1.0;
    for (int d = dim - 1; d >= 0; --d) {
      int k = static_cast<int>(rem % n);
      rem /= n;
      grid.nodes(idx, d) = rule.nodes[k];
      w *= rule.weights[k];
    }
    grid.weights[idx] = w;
  }
  return grid;
}

}  // namespace dynlab
