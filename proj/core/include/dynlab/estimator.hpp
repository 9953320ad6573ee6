#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "dynlab/design.hpp"
#include "dynlab/model_spec.hpp"

namespace dynlab {

class NonFiniteLikelihoodError : public std::runtime_error {
 public:
  NonFiniteLikelihoodError(std::int64_t person, double worst_index)
      : std::runtime_error("likelihood not finite for person " + std::to_string(person) +
                           " (largest linear index " + std::to_string(worst_index) + ")"),
        person(person),
        worst_index(worst_index) {}
  std::int64_t person;
  double worst_index;
};
class CollinearDesignError : public std::runtime_error {
 public:
  explicit CollinearDesignError(const std::string& what) : std::runtime_error(what) {}
};
class SeparationDetectedError : public std::runtime_error {
 public:
  explicit SeparationDetectedError(const std::string& name, double value)
      : std::runtime_error("separation suspected: |" + name + "| = " +
                           std::to_string(value) + " exceeds 30"),
        parameter(name) {}
  std::string parameter;
};

// Flat parameter indexing. Order: transition-equation coefficients for each
// non-base outcome over all design columns; then (Heckman only) first-period
// coefficients per non-base outcome followed by the per-outcome loadings on
// the shared random effects; then the lower-triangular Cholesky factor of
// the heterogeneity covariance, row-major.
struct ParameterLayout {
  int n_outcomes = 0;
  int base = 0;
  int n_cols = 0;
  int n_init_cols = 0;  // 0 unless Heckman
  int n_effects = 0;    // heterogeneity dimension (J-1, or 0 when pooled)
  bool heckman = false;

  int n_nonbase() const { return n_outcomes - 1; }
  // Non-base slot of outcome j (outcomes order skipping the base); -1 for base.
  int nonbase_slot(int j) const { return j == base ? -1 : j - (j > base ? 1 : 0); }
  int outcome_of_slot(int s) const { return s < base ? s : s + 1; }

  int coef_index(int slot, int col) const { return slot * n_cols + col; }
  int heckman_coef_index(int slot, int col) const {
    return n_nonbase() * n_cols + slot * n_init_cols + col;
  }
  int rho_index(int slot) const {
    return n_nonbase() * (n_cols + n_init_cols) + slot;
  }
  int chol_start() const {
    return n_nonbase() * n_cols +
           (heckman ? n_nonbase() * (n_init_cols + 1) : 0);
  }
  int chol_index(int a, int b) const { return chol_start() + a * (a + 1) / 2 + b; }
  int size() const {
    return chol_start() + (n_effects > 0 ? n_effects * (n_effects + 1) / 2 : 0);
  }
};

ParameterLayout make_layout(const ModelSpec& spec, const DesignMatrix& design);

struct ParameterVector {
  ParameterLayout layout;
  Eigen::VectorXd values;

  Eigen::MatrixXd cholesky() const;   // lower-triangular L
  Eigen::MatrixXd sigma_eta() const;  // L L'
};

ParameterVector zero_parameters(const ModelSpec& spec, const DesignMatrix& design);

std::vector<std::string> parameter_names(const ParameterLayout& layout,
                                         const DesignMatrix& design);

struct LikelihoodResult {
  double total = 0.0;
  Eigen::VectorXd per_person;
};

// Marginal log-likelihood; random effects are integrated out with
// tensor-product Gauss-Hermite quadrature after the Cholesky change of
// variables. Pooled specifications skip the integration entirely.
LikelihoodResult log_likelihood(const ModelSpec& spec, const ParameterVector& params,
                                const DesignMatrix& design, int threads = 1);

// Exact analytic score, differentiated under the quadrature sum.
Eigen::VectorXd gradient(const ModelSpec& spec, const ParameterVector& params,
                         const DesignMatrix& design, int threads = 1);

// Likelihood with the normal heterogeneity replaced by an explicit discrete
// mixture (support points in effect space, weights summing to one). Used by
// oracle tests; gradients are not provided on this path.
LikelihoodResult log_likelihood_at_support(const ModelSpec& spec,
                                           const ParameterVector& params,
                                           const DesignMatrix& design,
                                           const std::vector<Eigen::VectorXd>& support,
                                           const Eigen::VectorXd& weights);

struct FitOptions {
  std::optional<Eigen::VectorXd> start;
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  int threads = 1;
  bool pooled_warm_start = true;
  double separation_bound = 30.0;
  double initial_chol_diag = 0.5;
  bool quadrature_check = true;  // re-evaluate at 15 nodes and flag drift
};

struct FitResult {
  ModelSpec spec;
  ParameterLayout layout;
  std::vector<std::string> names;
  Eigen::VectorXd estimates;
  Eigen::MatrixXd covariance;  // cluster-robust sandwich
  double loglik = 0.0;
  Eigen::VectorXd per_person_loglik;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  long n_records = 0;
  long n_persons = 0;
  long n_clusters = 0;

  bool quadrature_stable = true;
  double quadrature_drift = 0.0;

  // Design metadata carried along so post-estimation can evaluate new points.
  std::vector<ColumnInfo> columns;
  std::vector<std::string> outcome_labels;
  std::vector<std::string> lag_labels;
  Eigen::VectorXd column_means;
  Eigen::VectorXd origin_frequencies;
  std::string manifest;

  ParameterVector parameters() const { return {layout, estimates}; }
  double se(int index) const { return std::sqrt(covariance(index, index)); }

  std::string to_json() const;
  static FitResult from_json(const std::string& text);
};

// Maximum likelihood via L-BFGS with the analytic score. Coefficients are
// warm-started from a pooled fit; the Cholesky diagonal starts at 0.5.
// Covariance is the cluster-robust sandwich over persons.
FitResult fit(const ModelSpec& spec, const DesignMatrix& design,
              const FitOptions& options = {});

// Static loan equation: the same machinery on a loan design (binary or
// loan-type outcome, one random effect per non-base outcome).
FitResult fit_loan_model(const ModelSpec& spec, const DesignMatrix& design,
                         const FitOptions& options = {});

struct RrrRow {
  std::string name;
  double coef = 0.0;
  double se = 0.0;
  double rrr = 1.0;
  double rrr_se = 0.0;
};

// Relative risk ratios exp(coef) with first-order delta-method standard
// errors, for every multinomial coefficient (loadings and covariance
// parameters are excluded).
std::vector<RrrRow> relative_risk_ratios(const FitResult& fit);

// Plain-text table: one row per design column, one column per non-base
// outcome, entries "RRR (SE)" with significance stars.
std::string render_rrr_table(const FitResult& fit);

}  // namespace dynlab
