#include "dynlab/simulate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "dynlab/cma.hpp"
#include "dynlab/rng.hpp"

namespace dynlab::simulate {

namespace {
using Json = nlohmann::ordered_json;

const std::vector<std::string> kOutcomeLabels = {"formal", "informal", "nojob"};
constexpr int kBaseOutcome = 1;  // informal

int outcome_index(const std::string& label) {
  for (std::size_t i = 0; i < kOutcomeLabels.size(); ++i)
    if (kOutcomeLabels[i] == label) return static_cast<int>(i);
  throw ConfigInvalidError("unknown outcome label: " + label);
}

}  // namespace

void DgpConfig::validate() const {
  if (persons < 1) throw ConfigInvalidError("persons must be positive");
  if (waves < 2) throw ConfigInvalidError("waves must be at least 2");
  if (sigma_eta.rows() != 2 || sigma_eta.cols() != 2)
    throw ConfigInvalidError("sigma_eta must be 2x2");
  if ((sigma_eta - sigma_eta.transpose()).norm() > 1e-12)
    throw ConfigInvalidError("sigma_eta must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_eta);
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw ConfigInvalidError("sigma_eta must be positive semi-definite");
  if (initial_intercepts.size() != kOutcomeLabels.size())
    throw ConfigInvalidError("initial_intercepts must have one entry per outcome");
  if (attrition < 0.0 || attrition > 1.0)
    throw ConfigInvalidError("attrition must be a probability");
  for (double w : entry_weights)
    if (w < 0.0) throw ConfigInvalidError("entry weights must be nonnegative");
  for (const auto& [label, block] : coef) {
    (void)block;
    if (label == kOutcomeLabels[kBaseOutcome])
      throw ConfigInvalidError("coefficients for the base outcome are normalized to zero");
    (void)outcome_index(label);
  }
  if (communities < 1) throw ConfigInvalidError("communities must be positive");
  if (loan_intent_rate < 0.0 || loan_intent_rate > 1.0)
    throw ConfigInvalidError("loan_intent_rate must be a probability");
}

namespace {

// Per-person generated data before states are attached.
struct PersonDraw {
  int entry_offset = 0;
  int n_waves = 0;
  Eigen::Vector2d eta = Eigen::Vector2d::Zero();
  std::map<std::string, std::vector<double>> fields;  // per wave
  std::vector<double> cma;                            // per wave
  int community = 0;
};

struct CommunitySeries {
  std::vector<cma::CmaComponents> components;        // flattened (community, year)
  std::map<std::pair<int, int>, double> index;       // (community, year) -> value
  std::map<std::pair<int, int>, cma::CmaComponents> by_key;
};

CommunitySeries draw_communities(const DgpConfig& cfg) {
  CommunitySeries series;
  for (int c = 0; c < cfg.communities; ++c) {
    Rng rng = Rng::substream(cfg.seed ^ 0x636f6d6dULL, static_cast<std::uint64_t>(c));
    double base_factor = rng.normal();
    for (int w = 0; w < cfg.waves; ++w) {
      double f = base_factor + 0.3 * rng.normal();
      cma::CmaComponents comp;
      comp.community_id = c;
      comp.year = cfg.first_year + w;
      comp.bank_presence = f < -0.4 ? 1 : (f < 0.4 ? 2 : 3);
      comp.dist_sber_km =
          comp.bank_presence == 1 ? std::exp(2.5 - 0.8 * f + 0.3 * rng.normal()) : 0.0;
      comp.dist_other_km =
          comp.bank_presence <= 2 ? std::exp(3.2 - 0.8 * f + 0.3 * rng.normal()) : 0.0;
      comp.offices_per_1000 = std::max(0.0, 0.2 + 0.08 * f + 0.02 * rng.normal());
      series.components.push_back(comp);
      series.by_key[{c, comp.year}] = comp;
    }
  }
  auto idx = cma::zscore_index(series.components);
  for (const auto& row : idx.rows)
    series.index[{static_cast<int>(row.community_id), row.year}] = row.value;
  return series;
}

// Value of a transition-equation design column for person data at wave t
// (0-based within the person) with lagged category `lag` (0 formal,
// 1 informal, 2 nojob).
struct ColumnEvaluator {
  const PersonDraw& person;
  int n_waves;

  double field(const std::string& name, int t) const {
    if (name == "cma_index") return person.cma[t];
    if (name == "age_sq") {
      double a = person.fields.at("age")[t];
      return a * a / 100.0;
    }
    auto it = person.fields.find(name);
    if (it == person.fields.end())
      throw ConfigInvalidError("coefficient references unknown covariate: " + name);
    return it->second[t];
  }

  double mean_later_waves(const std::string& name) const {
    double acc = 0.0;
    for (int t = 1; t < n_waves; ++t) acc += field(name, t);
    return acc / static_cast<double>(n_waves - 1);
  }

  double operator()(const std::string& column, int t, int lag, int init_state) const {
    if (column == "intercept") return 1.0;
    if (column.rfind("lag[", 0) == 0) {
      auto star = column.find("]*");
      if (star == std::string::npos) {
        std::string label = column.substr(4, column.size() - 5);
        return (lag == outcome_index(label)) ? 1.0 : 0.0;
      }
      std::string label = column.substr(4, star - 4);
      std::string var = column.substr(star + 2);
      double dummy = (lag == outcome_index(label)) ? 1.0 : 0.0;
      return dummy * field(var, t);
    }
    if (column.rfind("mean[", 0) == 0)
      return mean_later_waves(column.substr(5, column.size() - 6));
    if (column.rfind("init_state[", 0) == 0) {
      std::string label = column.substr(11, column.size() - 12);
      return (init_state == outcome_index(label)) ? 1.0 : 0.0;
    }
    if (column.rfind("init[", 0) == 0) return field(column.substr(5, column.size() - 6), 0);
    return field(column, t);
  }
};

double gumbel(Rng& rng) {
  double u;
  do {
    u = rng.uniform();
  } while (u <= 0.0);
  return -std::log(-std::log(u));
}

int sample_softmax(const Eigen::Vector3d& v, Rng& rng, bool gumbel_max) {
  if (gumbel_max) {
    int best = 0;
    double best_u = v[0] + gumbel(rng);
    for (int j = 1; j < 3; ++j) {
      double u = v[j] + gumbel(rng);
      if (u > best_u) {
        best_u = u;
        best = j;
      }
    }
    return best;
  }
  double m = v.maxCoeff();
  std::array<double, 3> w{};
  for (int j = 0; j < 3; ++j) w[j] = std::exp(v[j] - m);
  return rng.categorical(w);
}

}  // namespace

SimulatedPanel generate_panel(const DgpConfig& cfg) {
  cfg.validate();
  Eigen::LLT<Eigen::MatrixXd> llt(cfg.sigma_eta +
                                  1e-14 * Eigen::MatrixXd::Identity(2, 2));
  Eigen::MatrixXd chol = llt.matrixL();
  if (cfg.sigma_eta.isZero(0.0)) chol.setZero();

  CommunitySeries communities;
  if (cfg.cma == CmaProcess::Components) communities = draw_communities(cfg);

  std::vector<ObservationRow> rows;
  rows.reserve(static_cast<std::size_t>(cfg.persons) * cfg.waves);

  for (int i = 0; i < cfg.persons; ++i) {
    Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(i));
    PersonDraw person;

    // Entry wave and panel length; the first two waves never attrit.
    if (!cfg.entry_weights.empty())
      person.entry_offset = rng.categorical(cfg.entry_weights);
    int max_waves = cfg.waves - person.entry_offset;
    if (max_waves < 2) person.entry_offset = cfg.waves - 2, max_waves = 2;
    person.n_waves = 2;
    while (person.n_waves < max_waves && !rng.bernoulli(cfg.attrition))
      ++person.n_waves;

    person.eta = chol * Eigen::Vector2d(rng.normal(), rng.normal());

    // Default covariate paths, overridden by configured laws.
    const int T = person.n_waves;
    auto fill_constant = [&](const std::string& name, double v) {
      person.fields[name] = std::vector<double>(static_cast<std::size_t>(T), v);
    };
    double base_age = 25.0 + static_cast<double>(rng.uniform_int(25));
    person.fields["age"] = {};
    for (int t = 0; t < T; ++t) person.fields["age"].push_back(base_age + t);
    fill_constant("female", rng.bernoulli(0.5) ? 1.0 : 0.0);
    fill_constant("russian", 1.0);
    fill_constant("parent_educ", 1.0);
    fill_constant("pop_log", 4.0);
    fill_constant("urban", 1.0);
    fill_constant("district", 1.0);
    fill_constant("school_years", 12.0);
    fill_constant("married", 0.0);
    fill_constant("hh_size", 3.0);
    fill_constant("kids", 1.0);
    fill_constant("log_consumption", 3.5);
    fill_constant("interval_days", 365.0);

    for (const auto& law : cfg.covariates) {
      std::vector<double> path(static_cast<std::size_t>(T));
      if (law.binary) {
        if (law.time_constant) {
          double v = rng.bernoulli(law.p) ? 1.0 : 0.0;
          std::fill(path.begin(), path.end(), v);
        } else {
          for (auto& v : path) v = rng.bernoulli(law.p) ? 1.0 : 0.0;
        }
      } else {
        double a = law.between_sd > 0.0 ? rng.normal(0.0, law.between_sd) : 0.0;
        for (auto& v : path)
          v = law.mean + a + (law.time_constant ? 0.0 : rng.normal(0.0, law.within_sd));
        if (law.time_constant) std::fill(path.begin(), path.end(), path[0]);
      }
      person.fields[law.name] = std::move(path);
    }
    for (const auto& law : cfg.instruments) {
      double a = law.binary ? (rng.bernoulli(law.p) ? 1.0 : 0.0)
                            : law.mean + rng.normal(0.0, law.between_sd + law.within_sd);
      fill_constant(law.name, a);
    }

    // Credit accessibility path.
    person.cma.resize(static_cast<std::size_t>(T));
    if (cfg.cma == CmaProcess::Direct) {
      double c = rng.normal(0.0, cfg.cma_between_sd);
      for (int t = 0; t < T; ++t)
        person.cma[t] = c + (cfg.cma_within_sd > 0 ? rng.normal(0.0, cfg.cma_within_sd) : 0.0);
    } else {
      person.community = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(cfg.communities)));
      for (int t = 0; t < T; ++t) {
        int year = cfg.first_year + person.entry_offset + t;
        person.cma[t] = communities.index.at({person.community, year});
      }
    }

    ColumnEvaluator eval{person, T};

    // Initial state.
    int init_state;
    if (!cfg.init_coef.empty()) {
      Eigen::Vector3d v0 = Eigen::Vector3d::Zero();
      for (const auto& [label, block] : cfg.init_coef) {
        int j = outcome_index(label);
        double lin = 0.0;
        for (const auto& [col, value] : block) {
          std::string base = col;
          if (base.rfind("init[", 0) == 0) base = base.substr(5, base.size() - 6);
          lin += value * (base == "intercept" ? 1.0 : eval.field(base, 0));
        }
        auto rho_it = cfg.init_rho.find(label);
        if (rho_it != cfg.init_rho.end()) {
          int slot = j < kBaseOutcome ? j : j - 1;
          lin += rho_it->second * person.eta[slot];
        }
        v0[j] = lin;
      }
      init_state = sample_softmax(v0, rng, false);
    } else {
      Eigen::Vector3d v0;
      for (int j = 0; j < 3; ++j) {
        v0[j] = cfg.initial_intercepts[j];
        if (j != kBaseOutcome && cfg.initial_mixing != 0.0) {
          int slot = j < kBaseOutcome ? j : j - 1;
          v0[j] += cfg.initial_mixing * person.eta[slot];
        }
      }
      init_state = sample_softmax(v0, rng, false);
    }

    // Transitions.
    std::vector<int> states(static_cast<std::size_t>(T));
    states[0] = init_state;
    for (int t = 0; t + 1 < T; ++t) {
      Eigen::Vector3d v = Eigen::Vector3d::Zero();
      for (const auto& [label, block] : cfg.coef) {
        int j = outcome_index(label);
        int slot = j < kBaseOutcome ? j : j - 1;
        double lin = person.eta[slot];
        for (const auto& [col, value] : block)
          lin += value * eval(col, t, states[static_cast<std::size_t>(t)], init_state);
        v[j] = lin;
      }
      states[static_cast<std::size_t>(t + 1)] =
          sample_softmax(v, rng, cfg.gumbel_max_sampling);
    }

    // Loan outcomes: latent logistic with a person effect; the loan taken
    // over (t, t+1] is reported at the destination interview.
    std::vector<int> loan_taken(static_cast<std::size_t>(T), 0);
    std::vector<int> loan_intent(static_cast<std::size_t>(T), 0);
    if (cfg.loans) {
      double lambda = rng.normal(0.0, cfg.loan_sigma);
      for (int t = 0; t < T; ++t)
        loan_intent[static_cast<std::size_t>(t)] =
            rng.bernoulli(cfg.loan_intent_rate) ? 1 : 0;
      for (int t = 0; t + 1 < T; ++t) {
        double lin = lambda;
        for (const auto& [col, value] : cfg.loan_coef)
          lin += value * eval(col, t, states[static_cast<std::size_t>(t)], init_state);
        double pr = 1.0 / (1.0 + std::exp(-lin));
        loan_taken[static_cast<std::size_t>(t + 1)] = rng.bernoulli(pr) ? 1 : 0;
      }
    }

    for (int t = 0; t < T; ++t) {
      ObservationRow row;
      row.person_id = i + 1;
      row.wave_year = cfg.first_year + person.entry_offset + t;
      switch (states[static_cast<std::size_t>(t)]) {
        case 0: row.state = LaborState::Formal; break;
        case 1: row.state = LaborState::Informal; break;
        default: row.state = LaborState::NoJob; break;
      }
      row.age = person.fields.at("age")[static_cast<std::size_t>(t)];
      row.female = person.fields.at("female")[static_cast<std::size_t>(t)];
      row.russian = person.fields.at("russian")[static_cast<std::size_t>(t)];
      row.parent_educ =
          static_cast<long long>(person.fields.at("parent_educ")[static_cast<std::size_t>(t)]);
      row.school_years = person.fields.at("school_years")[static_cast<std::size_t>(t)];
      row.married = person.fields.at("married")[static_cast<std::size_t>(t)];
      row.hh_size = person.fields.at("hh_size")[static_cast<std::size_t>(t)];
      row.kids = person.fields.at("kids")[static_cast<std::size_t>(t)];
      row.log_consumption =
          person.fields.at("log_consumption")[static_cast<std::size_t>(t)];
      row.pop_log = person.fields.at("pop_log")[static_cast<std::size_t>(t)];
      row.urban = person.fields.at("urban")[static_cast<std::size_t>(t)];
      row.district =
          static_cast<long long>(person.fields.at("district")[static_cast<std::size_t>(t)]);
      row.interval_days = person.fields.at("interval_days")[static_cast<std::size_t>(t)];
      row.cma_index = person.cma[static_cast<std::size_t>(t)];
      if (cfg.cma == CmaProcess::Components) {
        const auto& comp =
            communities.by_key.at({person.community, row.wave_year});
        row.bank_presence = comp.bank_presence;
        row.dist_sber_km = comp.dist_sber_km;
        row.dist_other_km = comp.dist_other_km;
        row.offices_per_1000 = comp.offices_per_1000;
        row.district = person.community + 1;
      } else {
        row.bank_presence = 3;
        row.dist_sber_km = 0.0;
        row.dist_other_km = 0.0;
        row.offices_per_1000 = 0.2;
      }
      row.loan_taken = loan_taken[static_cast<std::size_t>(t)];
      row.loan_intent = loan_intent[static_cast<std::size_t>(t)];
      for (const auto& law : cfg.instruments) {
        double v = person.fields.at(law.name)[0];
        if (law.name == "rel_earn_17") row.rel_earn_17 = v;
        else if (law.name == "govt_share") row.govt_share = v;
        else if (law.name == "informal_share") row.informal_share = v;
        else if (law.name == "soe_closed") row.soe_closed = static_cast<long long>(v);
        else throw ConfigInvalidError("unknown instrument field: " + law.name);
      }
      rows.push_back(std::move(row));
    }
  }

  SimulatedPanel out;
  out.panel = PanelDataset::from_rows(std::move(rows));
  out.truth.seed = cfg.seed;
  out.truth.config_json = cfg.to_json();
  for (const auto& [label, block] : cfg.coef)
    for (const auto& [col, value] : block) out.truth.params[label + ":" + col] = value;
  for (const auto& [label, block] : cfg.init_coef)
    for (const auto& [col, value] : block)
      out.truth.params[label + ":init_eq[" + col + "]"] = value;
  for (const auto& [label, rho] : cfg.init_rho)
    out.truth.params[label + ":rho"] = rho;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b <= a; ++b)
      out.truth.params["chol[" + std::to_string(a) + "," + std::to_string(b) + "]"] =
          chol(a, b);
  for (const auto& [col, value] : cfg.loan_coef)
    out.truth.params["loan:" + col] = value;
  if (cfg.loans) out.truth.params["loan:chol[0,0]"] = cfg.loan_sigma;
  return out;
}

ModelSpec spec_for_dgp(const DgpConfig& cfg, InitialConditionsMode mode) {
  ModelSpec spec;
  spec.year_dummies = false;
  spec.entry_wave_dummies = false;
  spec.initial_conditions = mode;
  spec.heterogeneity = HeterogeneityMode::RandomEffects;

  std::set<std::string> current, constant, means, inits;
  bool interactions = false;
  for (const auto& [label, block] : cfg.coef) {
    (void)label;
    for (const auto& [col, value] : block) {
      (void)value;
      if (col == "intercept" || col.rfind("init_state[", 0) == 0) continue;
      if (col.rfind("lag[", 0) == 0) {
        if (col.find("]*") != std::string::npos) interactions = true;
        continue;
      }
      if (col.rfind("mean[", 0) == 0) {
        means.insert(col.substr(5, col.size() - 6));
        continue;
      }
      if (col.rfind("init[", 0) == 0) {
        inits.insert(col.substr(5, col.size() - 6));
        continue;
      }
      current.insert(col);
    }
  }
  for (const auto& law : cfg.covariates)
    if (law.time_constant) constant.insert(law.name);
  for (auto it = current.begin(); it != current.end();) {
    if (constant.count(*it)) it = current.erase(it);
    else ++it;
  }
  spec.current.assign(current.begin(), current.end());
  spec.constant.assign(constant.begin(), constant.end());
  if (mode == InitialConditionsMode::Wrs) {
    if (means.empty()) means = {spec.current.empty() ? std::string("cma_index")
                                                     : spec.current.front()};
    if (inits.empty()) inits = means;
  }
  spec.time_means.assign(means.begin(), means.end());
  spec.initial_values.assign(inits.begin(), inits.end());
  if (mode == InitialConditionsMode::Heckman) {
    for (const auto& law : cfg.instruments) spec.instruments.push_back(law.name);
  }
  spec.interaction_vars.clear();
  if (interactions) spec.interaction_vars = {"cma_index"};
  spec.validate();
  return spec;
}

double brute_force_likelihood(const ModelSpec& spec, const ParameterVector& params,
                              const DesignMatrix& design,
                              const std::vector<Eigen::VectorXd>& support,
                              const Eigen::VectorXd& weights) {
  if (support.empty() || static_cast<long>(support.size()) != weights.size())
    throw SupportInvalidError("support and weights sizes differ or are empty");
  double wsum = 0.0;
  for (long k = 0; k < weights.size(); ++k) {
    if (weights[k] < 0.0) throw SupportInvalidError("negative support weight");
    wsum += weights[k];
  }
  if (std::abs(wsum - 1.0) > 1e-12)
    throw SupportInvalidError("support weights must sum to one");

  ParameterLayout layout = make_layout(spec, design);
  if (params.values.size() != layout.size())
    throw SupportInvalidError("parameter vector does not match the model layout");
  const int nb = layout.n_nonbase();
  for (const auto& pt : support)
    if (pt.size() != nb) throw SupportInvalidError("support point has wrong dimension");

  double total = 0.0;
  for (std::size_t p = 0; p < design.n_persons(); ++p) {
    double person_lik = 0.0;
    for (std::size_t k = 0; k < support.size(); ++k) {
      double prod = weights[static_cast<long>(k)];
      for (std::size_t r = design.person_first[p]; r < design.person_first[p + 1]; ++r) {
        // Naive softmax, on purpose: this is the reference arithmetic.
        double denom = 1.0;
        double num = 1.0;
        for (int s = 0; s < nb; ++s) {
          double lin = support[k][s];
          for (int c = 0; c < layout.n_cols; ++c)
            lin += params.values[layout.coef_index(s, c)] * design.x(static_cast<long>(r), c);
          double e = std::exp(lin);
          denom += e;
          if (layout.outcome_of_slot(s) == design.outcome[r]) num = e;
        }
        if (design.outcome[r] == layout.base) num = 1.0;
        prod *= num / denom;
      }
      if (layout.heckman) {
        double denom = 1.0;
        double num = 1.0;
        for (int s = 0; s < nb; ++s) {
          double lin = params.values[layout.rho_index(s)] * support[k][s];
          for (int c = 0; c < layout.n_init_cols; ++c)
            lin += params.values[layout.heckman_coef_index(s, c)] *
                   design.x_init(static_cast<long>(p), c);
          double e = std::exp(lin);
          denom += e;
          if (layout.outcome_of_slot(s) == design.outcome_init[p]) num = e;
        }
        if (design.outcome_init[p] == layout.base) num = 1.0;
        prod *= num / denom;
      }
      person_lik += prod;
    }
    total += std::log(person_lik);
  }
  return total;
}

namespace {

Json law_to_json(const CovariateLaw& law) {
  Json j;
  j["name"] = law.name;
  j["time_constant"] = law.time_constant;
  j["binary"] = law.binary;
  j["p"] = law.p;
  j["mean"] = law.mean;
  j["between_sd"] = law.between_sd;
  j["within_sd"] = law.within_sd;
  return j;
}

CovariateLaw law_from_json(const Json& j) {
  CovariateLaw law;
  law.name = j.at("name");
  if (j.contains("time_constant")) law.time_constant = j["time_constant"];
  if (j.contains("binary")) law.binary = j["binary"];
  if (j.contains("p")) law.p = j["p"];
  if (j.contains("mean")) law.mean = j["mean"];
  if (j.contains("between_sd")) law.between_sd = j["between_sd"];
  if (j.contains("within_sd")) law.within_sd = j["within_sd"];
  return law;
}

}  // namespace

std::string DgpConfig::to_json() const {
  Json j;
  j["persons"] = persons;
  j["waves"] = waves;
  j["seed"] = seed;
  j["first_year"] = first_year;
  j["covariates"] = Json::array();
  for (const auto& law : covariates) j["covariates"].push_back(law_to_json(law));
  j["instruments"] = Json::array();
  for (const auto& law : instruments) j["instruments"].push_back(law_to_json(law));
  j["coef"] = coef;
  j["sigma_eta"] = {{sigma_eta(0, 0), sigma_eta(0, 1)},
                    {sigma_eta(1, 0), sigma_eta(1, 1)}};
  j["initial_intercepts"] = initial_intercepts;
  j["initial_mixing"] = initial_mixing;
  j["init_coef"] = init_coef;
  j["init_rho"] = init_rho;
  j["attrition"] = attrition;
  j["entry_weights"] = entry_weights;
  j["cma"] = cma == CmaProcess::Direct ? "direct" : "components";
  j["cma_between_sd"] = cma_between_sd;
  j["cma_within_sd"] = cma_within_sd;
  j["communities"] = communities;
  j["loans"] = loans;
  j["loan_coef"] = loan_coef;
  j["loan_sigma"] = loan_sigma;
  j["loan_intent_rate"] = loan_intent_rate;
  j["gumbel_max_sampling"] = gumbel_max_sampling;
  return j.dump(2);
}

DgpConfig DgpConfig::from_json(const std::string& text) {
  Json j = Json::parse(text);
  DgpConfig cfg;
  auto get = [&](const char* key, auto& target) {
    if (j.contains(key)) target = j[key].get<std::decay_t<decltype(target)>>();
  };
  get("persons", cfg.persons);
  get("waves", cfg.waves);
  get("seed", cfg.seed);
  get("first_year", cfg.first_year);
  if (j.contains("covariates"))
    for (const auto& jl : j["covariates"]) cfg.covariates.push_back(law_from_json(jl));
  if (j.contains("instruments"))
    for (const auto& jl : j["instruments"]) cfg.instruments.push_back(law_from_json(jl));
  get("coef", cfg.coef);
  if (j.contains("sigma_eta")) {
    auto m = j["sigma_eta"].get<std::vector<std::vector<double>>>();
    cfg.sigma_eta.resize(2, 2);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) cfg.sigma_eta(a, b) = m[a][b];
  }
  get("initial_intercepts", cfg.initial_intercepts);
  get("initial_mixing", cfg.initial_mixing);
  get("init_coef", cfg.init_coef);
  get("init_rho", cfg.init_rho);
  get("attrition", cfg.attrition);
  get("entry_weights", cfg.entry_weights);
  if (j.contains("cma"))
    cfg.cma = j["cma"] == "components" ? CmaProcess::Components : CmaProcess::Direct;
  get("cma_between_sd", cfg.cma_between_sd);
  get("cma_within_sd", cfg.cma_within_sd);
  get("communities", cfg.communities);
  get("loans", cfg.loans);
  get("loan_coef", cfg.loan_coef);
  get("loan_sigma", cfg.loan_sigma);
  get("loan_intent_rate", cfg.loan_intent_rate);
  get("gumbel_max_sampling", cfg.gumbel_max_sampling);
  cfg.validate();
  return cfg;
}

std::string GroundTruth::to_json() const {
  Json j;
  j["seed"] = seed;
  j["params"] = params;
  j["config"] = Json::parse(config_json);
  return j.dump(2);
}

}  // namespace dynlab::simulate
