#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "dynlab/estimator.hpp"

namespace dynlab {

class TargetNotInSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class DimensionMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class ScenarioSpecMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class EmptySubgroupError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EffectsOptions {
  // Integrate predictions over the estimated heterogeneity distribution
  // (population-averaged); false evaluates at eta = 0.
  bool population_averaged = true;
  // Relative step for the delta-method Jacobian over parameters.
  double jacobian_step = 1e-5;
};

// Outcome probabilities at a complete design row (lag dummies and
// interaction columns must already be consistent).
Eigen::VectorXd predict_probabilities(const FitResult& fit, const Eigen::VectorXd& row,
                                      const EffectsOptions& options = {});

// Same, with the lag block set for `origin` and interactions recomputed.
Eigen::VectorXd predict_probabilities_at(const FitResult& fit, Eigen::VectorXd base_row,
                                         int origin, const EffectsOptions& options = {});

// Average marginal effect of a continuous covariate on every transition
// probability and on the next-period state shares, with delta-method
// standard errors (Jacobian by central differences over the parameters).
struct EffectReport {
  std::string target;
  std::vector<std::string> origins;       // per-origin rows, then "all"
  std::vector<std::string> destinations;  // outcome labels
  Eigen::MatrixXd effects;                // (origins+1) x destinations
  Eigen::MatrixXd ses;
  std::vector<long> origin_counts;
};

EffectReport average_marginal_effect(const FitResult& fit, const DesignMatrix& design,
                                     const std::string& target,
                                     const EffectsOptions& options = {});

// Predicted state shares at covariate means with the target covariate set to
// each grid value; origins are mixed at their sample frequencies.
struct GridPoint {
  double value = 0.0;
  Eigen::VectorXd prob;
  Eigen::VectorXd se;
  Eigen::VectorXd lo95;
  Eigen::VectorXd hi95;
};

std::vector<GridPoint> effects_at_grid(const FitResult& fit, const std::string& target,
                                       const std::vector<double>& grid,
                                       const EffectsOptions& options = {});

struct PolicyEdit {
  std::string column;
  double before = 0.0;
  double after = 0.0;
};

struct PolicyScenario {
  std::string name;
  std::vector<PolicyEdit> edits;
};

struct PolicyResult {
  std::string name;
  std::vector<std::string> outcome_labels;
  Eigen::VectorXd before, before_se;
  Eigen::VectorXd after, after_se;
  double informal_change = 0.0;
  double informal_change_se = 0.0;
};

// Predicted state shares before and after a covariate edit, evaluated at
// sample means of all other covariates with origin states mixed at their
// sample frequencies.
PolicyResult policy_simulation(const FitResult& fit, const PolicyScenario& scenario,
                               const EffectsOptions& options = {});

struct Subgroup {
  std::string name;
  std::vector<std::uint8_t> mask;  // over design records
};

struct SubgroupEffect {
  std::string name;
  double ame_informal = 0.0;  // effect of the target on the informal share
  double se = 0.0;
  double mean_informal = 0.0;  // predicted informal share in the subgroup
  long n = 0;
};

std::vector<SubgroupEffect> heterogeneous_effects(const FitResult& fit,
                                                  const DesignMatrix& design,
                                                  const std::string& target,
                                                  const std::vector<Subgroup>& subgroups,
                                                  const EffectsOptions& options = {});

}  // namespace dynlab
