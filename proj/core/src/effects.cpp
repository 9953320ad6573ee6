#include "dynlab/effects.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "dynlab/quadrature.hpp"

namespace dynlab {

namespace {

// Integration nodes in effect space for a given parameter vector.
struct EffectNodes {
  Eigen::MatrixXd eta;   // K x nb
  Eigen::VectorXd w;     // K
};

EffectNodes effect_nodes(const FitResult& fit, const Eigen::VectorXd& params,
                         const EffectsOptions& opt) {
  const auto& lo = fit.layout;
  const int nb = lo.n_nonbase();
  EffectNodes nodes;
  if (lo.n_effects == 0 || !opt.population_averaged) {
    nodes.eta = Eigen::MatrixXd::Zero(1, nb);
    nodes.w = Eigen::VectorXd::Ones(1);
    return nodes;
  }
  QuadratureGrid grid = tensor_grid(gauss_hermite(fit.spec.quadrature_nodes),
                                    lo.n_effects);
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(lo.n_effects, lo.n_effects);
  for (int a = 0; a < lo.n_effects; ++a)
    for (int b = 0; b <= a; ++b) chol(a, b) = params[lo.chol_index(a, b)];
  nodes.eta = grid.nodes * chol.transpose();
  nodes.w = grid.weights;
  return nodes;
}

Eigen::MatrixXd coef_matrix(const ParameterLayout& lo, const Eigen::VectorXd& params) {
  Eigen::MatrixXd theta(lo.n_cols, lo.n_nonbase());
  for (int s = 0; s < lo.n_nonbase(); ++s)
    for (int c = 0; c < lo.n_cols; ++c) theta(c, s) = params[lo.coef_index(s, c)];
  return theta;
}

// Probabilities over all outcomes at one row, averaged over nodes.
Eigen::VectorXd prob_row(const ParameterLayout& lo, const Eigen::MatrixXd& theta,
                         const EffectNodes& nodes, const Eigen::VectorXd& row) {
  const int nb = lo.n_nonbase();
  Eigen::VectorXd fixed = theta.transpose() * row;  // nb
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(lo.n_outcomes);
  for (long k = 0; k < nodes.w.size(); ++k) {
    double vmax = 0.0;
    for (int s = 0; s < nb; ++s) vmax = std::max(vmax, fixed[s] + nodes.eta(k, s));
    double denom = std::exp(-vmax);
    Eigen::VectorXd e(nb);
    for (int s = 0; s < nb; ++s) {
      e[s] = std::exp(fixed[s] + nodes.eta(k, s) - vmax);
      denom += e[s];
    }
    probs[lo.base] += nodes.w[k] * std::exp(-vmax) / denom;
    for (int s = 0; s < nb; ++s)
      probs[lo.outcome_of_slot(s)] += nodes.w[k] * e[s] / denom;
  }
  return probs;
}

// Derivative of the averaged probabilities with respect to a covariate whose
// per-outcome index derivatives are d (length nb, base normalized to zero):
// dP_m/dx = sum_k w_k p_mk (d_m - sum_j p_jk d_j).
Eigen::VectorXd prob_derivative(const ParameterLayout& lo, const Eigen::MatrixXd& theta,
                                const EffectNodes& nodes, const Eigen::VectorXd& row,
                                const Eigen::VectorXd& d) {
  const int nb = lo.n_nonbase();
  Eigen::VectorXd fixed = theta.transpose() * row;
  Eigen::VectorXd deriv = Eigen::VectorXd::Zero(lo.n_outcomes);
  for (long k = 0; k < nodes.w.size(); ++k) {
    double vmax = 0.0;
    for (int s = 0; s < nb; ++s) vmax = std::max(vmax, fixed[s] + nodes.eta(k, s));
    double denom = std::exp(-vmax);
    Eigen::VectorXd e(nb);
    for (int s = 0; s < nb; ++s) {
      e[s] = std::exp(fixed[s] + nodes.eta(k, s) - vmax);
      denom += e[s];
    }
    double pbar = 0.0;
    for (int s = 0; s < nb; ++s) pbar += (e[s] / denom) * d[s];
    deriv[lo.base] += nodes.w[k] * (std::exp(-vmax) / denom) * (0.0 - pbar);
    for (int s = 0; s < nb; ++s)
      deriv[lo.outcome_of_slot(s)] += nodes.w[k] * (e[s] / denom) * (d[s] - pbar);
  }
  return deriv;
}

int require_column(const FitResult& fit, const std::string& name) {
  for (std::size_t c = 0; c < fit.columns.size(); ++c)
    if (fit.columns[c].name == name) return static_cast<int>(c);
  throw TargetNotInSpecError("column '" + name + "' is not in the fitted specification");
}

// Index derivative of the target for a record: the direct coefficient plus
// every interaction channel through the target.
Eigen::VectorXd target_direction(const FitResult& fit, const Eigen::VectorXd& params,
                                 int target_col, const Eigen::VectorXd& row) {
  const auto& lo = fit.layout;
  Eigen::VectorXd d(lo.n_nonbase());
  for (int s = 0; s < lo.n_nonbase(); ++s) {
    double v = params[lo.coef_index(s, target_col)];
    for (std::size_t c = 0; c < fit.columns.size(); ++c) {
      if (fit.columns[c].block == ColumnBlock::Interaction &&
          fit.columns[c].var_parent == target_col)
        v += params[lo.coef_index(s, static_cast<int>(c))] * row[fit.columns[c].lag_parent];
    }
    d[s] = v;
  }
  return d;
}

// Delta-method standard errors for a vector-valued statistic of the
// parameters, with a central-difference Jacobian.
Eigen::VectorXd delta_se(const FitResult& fit,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& stat,
                         const EffectsOptions& opt) {
  const Eigen::VectorXd& theta = fit.estimates;
  const int np = static_cast<int>(theta.size());
  Eigen::VectorXd base = stat(theta);
  Eigen::MatrixXd jac(base.size(), np);
  Eigen::VectorXd p = theta;
  for (int i = 0; i < np; ++i) {
    double h = opt.jacobian_step * std::max(1.0, std::abs(theta[i]));
    double saved = p[i];
    p[i] = saved + h;
    Eigen::VectorXd up = stat(p);
    p[i] = saved - h;
    Eigen::VectorXd dn = stat(p);
    p[i] = saved;
    jac.col(i) = (up - dn) / (2.0 * h);
  }
  Eigen::MatrixXd cov = jac * fit.covariance * jac.transpose();
  return cov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

}  // namespace

Eigen::VectorXd predict_probabilities(const FitResult& fit, const Eigen::VectorXd& row,
                                      const EffectsOptions& options) {
  if (row.size() != fit.layout.n_cols)
    throw DimensionMismatchError("row has " + std::to_string(row.size()) +
                                 " entries, expected " +
                                 std::to_string(fit.layout.n_cols));
  EffectNodes nodes = effect_nodes(fit, fit.estimates, options);
  return prob_row(fit.layout, coef_matrix(fit.layout, fit.estimates), nodes, row);
}

Eigen::VectorXd predict_probabilities_at(const FitResult& fit, Eigen::VectorXd base_row,
                                         int origin, const EffectsOptions& options) {
  if (origin < 0 || origin >= static_cast<int>(fit.lag_labels.size()))
    throw DimensionMismatchError("origin category out of range");
  Eigen::VectorXd row = design_row_for_origin(fit.columns, std::move(base_row), origin);
  return predict_probabilities(fit, row, options);
}

namespace {

// AME matrix for a parameter vector: rows = origins then overall, columns =
// destination outcomes.
Eigen::MatrixXd ame_matrix(const FitResult& fit, const DesignMatrix& design,
                           int target_col, const Eigen::VectorXd& params,
                           const EffectsOptions& opt) {
  const auto& lo = fit.layout;
  EffectNodes nodes = effect_nodes(fit, params, opt);
  Eigen::MatrixXd theta = coef_matrix(lo, params);
  const int n_origins = static_cast<int>(fit.lag_labels.size());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n_origins + 1, lo.n_outcomes);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_origins + 1);
  for (std::size_t r = 0; r < design.n_records(); ++r) {
    Eigen::VectorXd row = design.x.row(static_cast<long>(r)).transpose();
    Eigen::VectorXd d = target_direction(fit, params, target_col, row);
    Eigen::VectorXd deriv = prob_derivative(lo, theta, nodes, row, d);
    int o = design.lag_state[r];
    acc.row(o) += deriv.transpose();
    acc.row(n_origins) += deriv.transpose();
    counts[o] += 1.0;
    counts[n_origins] += 1.0;
  }
  for (int o = 0; o <= n_origins; ++o)
    if (counts[o] > 0.0) acc.row(o) /= counts[o];
  return acc;
}

}  // namespace

EffectReport average_marginal_effect(const FitResult& fit, const DesignMatrix& design,
                                     const std::string& target,
                                     const EffectsOptions& options) {
  const int target_col = require_column(fit, target);
  const auto& lo = fit.layout;
  const int n_origins = static_cast<int>(fit.lag_labels.size());

  EffectReport report;
  report.target = target;
  report.origins = fit.lag_labels;
  report.origins.push_back("all");
  report.destinations = fit.outcome_labels;
  report.effects = ame_matrix(fit, design, target_col, fit.estimates, options);

  report.origin_counts.assign(n_origins + 1, 0);
  for (int s : design.lag_state) ++report.origin_counts[static_cast<std::size_t>(s)];
  report.origin_counts[static_cast<std::size_t>(n_origins)] =
      static_cast<long>(design.n_records());

  auto stat = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    Eigen::MatrixXd m = ame_matrix(fit, design, target_col, p, options);
    return Eigen::Map<Eigen::VectorXd>(m.data(), m.size());
  };
  Eigen::VectorXd ses = delta_se(fit, stat, options);
  report.ses = Eigen::Map<Eigen::MatrixXd>(ses.data(), n_origins + 1, lo.n_outcomes);
  return report;
}

namespace {

// State shares at a base row: origin-specific predictions mixed at the
// sample origin frequencies.
Eigen::VectorXd state_shares(const FitResult& fit, const Eigen::VectorXd& params,
                             const Eigen::VectorXd& base_row, const EffectsOptions& opt) {
  EffectNodes nodes = effect_nodes(fit, params, opt);
  Eigen::MatrixXd theta = coef_matrix(fit.layout, params);
  Eigen::VectorXd shares = Eigen::VectorXd::Zero(fit.layout.n_outcomes);
  for (int o = 0; o < static_cast<int>(fit.lag_labels.size()); ++o) {
    double w = fit.origin_frequencies[o];
    if (w <= 0.0) continue;
    Eigen::VectorXd row = design_row_for_origin(fit.columns, base_row, o);
    shares += w * prob_row(fit.layout, theta, nodes, row);
  }
  return shares;
}

}  // namespace

std::vector<GridPoint> effects_at_grid(const FitResult& fit, const std::string& target,
                                       const std::vector<double>& grid,
                                       const EffectsOptions& options) {
  const int target_col = require_column(fit, target);
  std::vector<GridPoint> out;
  out.reserve(grid.size());
  for (double value : grid) {
    Eigen::VectorXd base = fit.column_means;
    base[target_col] = value;
    GridPoint pt;
    pt.value = value;
    pt.prob = state_shares(fit, fit.estimates, base, options);
    auto stat = [&](const Eigen::VectorXd& p) {
      return state_shares(fit, p, base, options);
    };
    pt.se = delta_se(fit, stat, options);
    pt.lo95 = pt.prob - 1.959963984540054 * pt.se;
    pt.hi95 = pt.prob + 1.959963984540054 * pt.se;
    out.push_back(std::move(pt));
  }
  return out;
}

PolicyResult policy_simulation(const FitResult& fit, const PolicyScenario& scenario,
                               const EffectsOptions& options) {
  if (scenario.edits.empty())
    throw ScenarioSpecMismatchError("scenario has no covariate edits");
  for (const auto& edit : scenario.edits) {
    if (edit.before == edit.after)
      throw ScenarioSpecMismatchError("edit on '" + edit.column +
                                      "' leaves the value unchanged");
    for (std::size_t c = 0; c < fit.columns.size(); ++c)
      if (fit.columns[c].name == edit.column) goto found;
    throw ScenarioSpecMismatchError("scenario edits column '" + edit.column +
                                    "' which is not in the fitted specification");
  found:;
  }

  Eigen::VectorXd before_row = fit.column_means;
  Eigen::VectorXd after_row = fit.column_means;
  for (const auto& edit : scenario.edits) {
    int c = require_column(fit, edit.column);
    before_row[c] = edit.before;
    after_row[c] = edit.after;
  }

  int informal = -1;
  for (std::size_t j = 0; j < fit.outcome_labels.size(); ++j)
    if (fit.outcome_labels[j] == "informal") informal = static_cast<int>(j);

  PolicyResult res;
  res.name = scenario.name;
  res.outcome_labels = fit.outcome_labels;
  res.before = state_shares(fit, fit.estimates, before_row, options);
  res.after = state_shares(fit, fit.estimates, after_row, options);

  auto stat_before = [&](const Eigen::VectorXd& p) {
    return state_shares(fit, p, before_row, options);
  };
  auto stat_after = [&](const Eigen::VectorXd& p) {
    return state_shares(fit, p, after_row, options);
  };
  res.before_se = delta_se(fit, stat_before, options);
  res.after_se = delta_se(fit, stat_after, options);

  if (informal >= 0) {
    res.informal_change = res.after[informal] - res.before[informal];
    auto stat_change = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
      Eigen::VectorXd delta(1);
      delta[0] = state_shares(fit, p, after_row, options)[informal] -
                 state_shares(fit, p, before_row, options)[informal];
      return delta;
    };
    res.informal_change_se = delta_se(fit, stat_change, options)[0];
  }
  return res;
}

std::vector<SubgroupEffect> heterogeneous_effects(const FitResult& fit,
                                                  const DesignMatrix& design,
                                                  const std::string& target,
                                                  const std::vector<Subgroup>& subgroups,
                                                  const EffectsOptions& options) {
  const int target_col = require_column(fit, target);
  int informal = -1;
  for (std::size_t j = 0; j < fit.outcome_labels.size(); ++j)
    if (fit.outcome_labels[j] == "informal") informal = static_cast<int>(j);
  if (informal < 0)
    throw TargetNotInSpecError("heterogeneous effects need an 'informal' outcome");

  const std::size_t n = design.n_records();
  for (std::size_t a = 0; a < subgroups.size(); ++a) {
    if (subgroups[a].mask.size() != n)
      throw std::invalid_argument("subgroup mask length does not match the design");
    for (std::size_t b = a + 1; b < subgroups.size(); ++b)
      for (std::size_t r = 0; r < n; ++r)
        if (subgroups[a].mask[r] && subgroups[b].mask[r])
          throw std::invalid_argument("subgroups '" + subgroups[a].name + "' and '" +
                                      subgroups[b].name + "' overlap");
  }

  auto subgroup_stat = [&](const Eigen::VectorXd& params,
                           const std::vector<std::uint8_t>& mask) -> Eigen::Vector2d {
    EffectNodes nodes = effect_nodes(fit, params, options);
    Eigen::MatrixXd theta = coef_matrix(fit.layout, params);
    double ame = 0.0, share = 0.0;
    long count = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (!mask[r]) continue;
      Eigen::VectorXd row = design.x.row(static_cast<long>(r)).transpose();
      Eigen::VectorXd d = target_direction(fit, params, target_col, row);
      ame += prob_derivative(fit.layout, theta, nodes, row, d)[informal];
      share += prob_row(fit.layout, theta, nodes, row)[informal];
      ++count;
    }
    return {ame / static_cast<double>(count), share / static_cast<double>(count)};
  };

  std::vector<SubgroupEffect> out;
  for (const auto& group : subgroups) {
    long count = 0;
    for (auto m : group.mask) count += m ? 1 : 0;
    if (count == 0) throw EmptySubgroupError("subgroup '" + group.name + "' is empty");
    SubgroupEffect eff;
    eff.name = group.name;
    eff.n = count;
    Eigen::Vector2d base = subgroup_stat(fit.estimates, group.mask);
    eff.ame_informal = base[0];
    eff.mean_informal = base[1];
    auto stat = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
      Eigen::Vector2d v = subgroup_stat(p, group.mask);
      Eigen::VectorXd r(1);
      r[0] = v[0];
      return r;
    };
    eff.se = delta_se(fit, stat, options)[0];
    out.push_back(std::move(eff));
  }
  return out;
}

}  // namespace dynlab
