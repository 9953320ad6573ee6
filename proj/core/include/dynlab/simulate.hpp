#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dynlab/estimator.hpp"
#include "dynlab/model_spec.hpp"
#include "dynlab/panel.hpp"

namespace dynlab::simulate {

class ConfigInvalidError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class SupportInvalidError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Law of one covariate. Continuous fields decompose into a person-level
// component and wave-level noise; binary fields are Bernoulli draws
// (per person when time-constant, per wave otherwise).
struct CovariateLaw {
  std::string name;
  bool time_constant = false;
  bool binary = false;
  double p = 0.5;
  double mean = 0.0;
  double between_sd = 0.0;
  double within_sd = 1.0;
};

enum class CmaProcess { Direct, Components };

// Generative configuration. Coefficient maps are keyed by design column
// names exactly as build_design produces them ("lag[informal]", "cma_index",
// "lag[nojob]*cma_index", "mean[school_years]", "init_state[nojob]", ...),
// per non-base outcome label. The first-period equation (when present) uses
// the first-period column names ("intercept", constants, "init[...]",
// instrument names).
struct DgpConfig {
  int persons = 1000;
  int waves = 6;
  std::uint64_t seed = 1;
  int first_year = 2006;

  std::vector<CovariateLaw> covariates;
  std::vector<CovariateLaw> instruments;  // written on every wave, used at wave 1

  std::map<std::string, std::map<std::string, double>> coef;
  Eigen::MatrixXd sigma_eta = Eigen::MatrixXd::Zero(2, 2);

  // Initial state: categorical with the given intercepts per outcome label
  // order {formal, informal, nojob}, shifted by initial_mixing * eta for the
  // non-base outcomes; or a first-period equation when init_coef is set.
  std::vector<double> initial_intercepts = {0.0, 0.0, 0.0};
  double initial_mixing = 0.0;
  std::map<std::string, std::map<std::string, double>> init_coef;
  std::map<std::string, double> init_rho;

  double attrition = 0.0;             // applies after the second wave
  std::vector<double> entry_weights;  // over entry offsets; empty = all at wave 1

  CmaProcess cma = CmaProcess::Direct;
  double cma_between_sd = 1.0;
  double cma_within_sd = 0.25;
  int communities = 40;

  bool loans = false;
  std::map<std::string, double> loan_coef;
  double loan_sigma = 0.5;
  double loan_intent_rate = 0.05;

  bool gumbel_max_sampling = false;

  void validate() const;
  std::string to_json() const;
  static DgpConfig from_json(const std::string& text);
};

struct GroundTruth {
  std::map<std::string, double> params;  // fitted-parameter name -> true value
  std::uint64_t seed = 0;
  std::string config_json;

  std::string to_json() const;
};

struct SimulatedPanel {
  PanelDataset panel;
  GroundTruth truth;
};

// Draws a panel from the dynamic model: per person, a bivariate normal
// effect, an initial state, then waves of categorical transitions from the
// softmax of the linear indices. Deterministic given the seed; per-person
// substreams keep parallel-order independence.
SimulatedPanel generate_panel(const DgpConfig& cfg);

// Model specification whose design matches the configuration's coefficient
// names (year and entry dummies off, blocks inferred from the keys used).
ModelSpec spec_for_dgp(const DgpConfig& cfg, InitialConditionsMode mode);

// Exhaustive discrete-mixture likelihood, written independently of the
// estimator's integration path: plain probability products summed over the
// support, no log-sum-exp rearrangement.
double brute_force_likelihood(const ModelSpec& spec, const ParameterVector& params,
                              const DesignMatrix& design,
                              const std::vector<Eigen::VectorXd>& support,
                              const Eigen::VectorXd& weights);

}  // namespace dynlab::simulate
