#include "dynlab/cma.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace dynlab::cma {

void CmaComponents::validate() const {
  if (bank_presence < 1 || bank_presence > 3)
    throw std::invalid_argument("bank_presence must be 1, 2 or 3");
  if (dist_sber_km < 0.0 || dist_other_km < 0.0)
    throw NegativeDistanceError("distance must be nonnegative");
  if (offices_per_1000 < 0.0)
    throw std::invalid_argument("offices_per_1000 must be nonnegative");
  if (bank_presence >= 2 && dist_sber_km != 0.0)
    throw std::invalid_argument("dist_sber_km must be zero when a bank is present");
  if (bank_presence == 3 && dist_other_km != 0.0)
    throw std::invalid_argument("dist_other_km must be zero when other banks operate");
}

double log_distance(double d_km) {
  if (d_km < 0.0) throw NegativeDistanceError("distance must be nonnegative");
  return std::log1p(d_km);
}

namespace {

const char* kComponentNames[4] = {"bank_presence", "dist_sber", "dist_other",
                                  "offices_per_1000"};

// Component matrix in raw orientation: presence, logged distances, offices.
Eigen::MatrixXd component_matrix(std::span<const CmaComponents> rows) {
  if (rows.size() < 2)
    throw std::invalid_argument("index construction needs at least two rows");
  Eigen::MatrixXd m(static_cast<long>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].validate();
    m(static_cast<long>(i), 0) = rows[i].bank_presence;
    m(static_cast<long>(i), 1) = log_distance(rows[i].dist_sber_km);
    m(static_cast<long>(i), 2) = log_distance(rows[i].dist_other_km);
    m(static_cast<long>(i), 3) = rows[i].offices_per_1000;
  }
  return m;
}

// Column-wise z-scores (sample standard deviation).
Eigen::MatrixXd standardize(Eigen::MatrixXd m) {
  const long n = m.rows();
  for (long c = 0; c < m.cols(); ++c) {
    double mean = m.col(c).mean();
    m.col(c).array() -= mean;
    double sd = std::sqrt(m.col(c).squaredNorm() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw DegenerateComponentError(kComponentNames[c]);
    m.col(c) /= sd;
  }
  return m;
}

Eigen::VectorXd restandardize(Eigen::VectorXd v) {
  const long n = v.size();
  double mean = v.mean();
  v.array() -= mean;
  double sd = std::sqrt(v.squaredNorm() / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw DegenerateComponentError("aggregate score");
  return v / sd;
}

CmaIndexResult pack(std::span<const CmaComponents> rows, const Eigen::VectorXd& values,
                    IndexMethod method) {
  CmaIndexResult out;
  out.method = method;
  out.rows.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.rows.push_back({rows[i].community_id, rows[i].year, values[static_cast<long>(i)]});
  return out;
}

}  // namespace

CmaIndexResult zscore_index(std::span<const CmaComponents> rows) {
  Eigen::MatrixXd z = standardize(component_matrix(rows));
  z.col(1) = -z.col(1);  // shorter distance = better access
  z.col(2) = -z.col(2);
  Eigen::VectorXd score = restandardize(z.rowwise().mean());
  return pack(rows, score, IndexMethod::ZScore);
}

CmaIndexResult pca_index(std::span<const CmaComponents> rows) {
  Eigen::MatrixXd z = standardize(component_matrix(rows));
  const double n = static_cast<double>(z.rows());
  Eigen::Matrix4d corr = (z.transpose() * z) / (n - 1.0);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(corr);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("pca_index: eigen decomposition failed");
  // Eigenvalues are ascending; the first component is the last one.
  Eigen::Vector4d loading = solver.eigenvectors().col(3);
  if (loading[0] < 0.0) loading = -loading;

  CmaIndexResult out = pack(rows, restandardize(z * loading), IndexMethod::Pca);
  out.loadings = loading;
  out.explained_variance = solver.eigenvalues()[3] / solver.eigenvalues().sum();
  return out;
}

}  // namespace dynlab::cma
