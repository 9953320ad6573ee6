#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynlab::cma {

class NegativeDistanceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class DegenerateComponentError : public std::runtime_error {
 public:
  explicit DegenerateComponentError(const std::string& component)
      : std::runtime_error("degenerate component (zero variance): " + component),
        component(component) {}
  std::string component;
};

// Raw accessibility measures for one community-year. Distances follow the
// coding rules: dist_sber is zero once any bank is present, dist_other is
// zero once a non-Sberbank office operates.
struct CmaComponents {
  std::int64_t community_id = 0;
  int year = 0;
  int bank_presence = 1;  // 1 no banks, 2 Sberbank only, 3 other banks
  double dist_sber_km = 0.0;
  double dist_other_km = 0.0;
  double offices_per_1000 = 0.0;

  void validate() const;
};

enum class IndexMethod { ZScore, Pca };

struct CmaIndexRow {
  std::int64_t community_id = 0;
  int year = 0;
  double value = 0.0;
};

struct CmaIndexResult {
  std::vector<CmaIndexRow> rows;
  IndexMethod method = IndexMethod::ZScore;
  // PCA only: loadings on (presence, log dist sber, log dist other, offices)
  // and the share of variance the first component explains.
  Eigen::Vector4d loadings = Eigen::Vector4d::Zero();
  double explained_variance = 0.0;
};

// ln(1 + d); distances are logged before standardization because they are
// heavily skewed.
double log_distance(double d_km);

// Average of the four component z-scores with distance scores negated so a
// higher value always means better access, re-standardized to mean zero and
// unit standard deviation over the construction sample.
CmaIndexResult zscore_index(std::span<const CmaComponents> rows);

// First principal component of the standardized component matrix
// (correlation PCA); the component sign is fixed so the bank-presence
// loading is positive, and scores are re-standardized.
CmaIndexResult pca_index(std::span<const CmaComponents> rows);

}  // namespace dynlab::cma
