#include "dynlab/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dynlab {

std::string to_string(ColumnBlock b) {
  switch (b) {
    case ColumnBlock::Intercept: return "intercept";
    case ColumnBlock::LagState: return "lag_state";
    case ColumnBlock::Current: return "current";
    case ColumnBlock::Interaction: return "interaction";
    case ColumnBlock::Constant: return "constant";
    case ColumnBlock::TimeMean: return "time_mean";
    case ColumnBlock::InitialValue: return "initial_value";
    case ColumnBlock::InitialState: return "initial_state";
    case ColumnBlock::Year: return "year";
    case ColumnBlock::EntryWave: return "entry_wave";
    case ColumnBlock::Instrument: return "instrument";
  }
  return "?";
}

namespace {

std::string state_label(LaborState s) {
  switch (s) {
    case LaborState::Formal: return "formal";
    case LaborState::Informal: return "informal";
    case LaborState::NoJob: return "nojob";
  }
  return "?";
}

std::string pay_label(PayType p) {
  switch (p) {
    case PayType::OfficialOnly: return "official";
    case PayType::PartlyUnofficial: return "partly";
    case PayType::UnofficialOnly: return "unofficial";
    case PayType::NoJob: return "nojob";
  }
  return "?";
}

std::string subtype_label(InformalSubtype s) {
  switch (s) {
    case InformalSubtype::UnregisteredEmployee: return "unregistered";
    case InformalSubtype::SelfEmployed: return "selfemployed";
    case InformalSubtype::PrivatePerson: return "privateperson";
    case InformalSubtype::Iea: return "iea";
    case InformalSubtype::Unknown: return "unknown";
  }
  return "?";
}

bool is_categorical_field(const std::string& name) {
  return name == "parent_educ" || name == "district" || name == "bank_presence";
}

// Omitted level per categorical field: the base schooling category for
// parents' education, the best-access category for bank presence, the
// smallest observed code otherwise.
long long omitted_level(const std::string& name, const std::set<long long>& levels) {
  if (name == "parent_educ" && levels.count(1)) return 1;
  if (name == "bank_presence" && levels.count(3)) return 3;
  return *levels.begin();
}

// Extended field access: supports the derived columns used by designs.
std::optional<double> design_field(const ObservationRow& row, const std::string& name) {
  if (name == "dist_sber_log") {
    if (row.dist_sber_km) return std::log1p(*row.dist_sber_km);
    return std::nullopt;
  }
  if (name == "dist_other_log") {
    if (row.dist_other_km) return std::log1p(*row.dist_other_km);
    return std::nullopt;
  }
  return field_value(row, name);
}

double require_field(const ObservationRow& row, const std::string& name) {
  auto v = design_field(row, name);
  if (!v)
    throw DataError("missing value for '" + name + "' (person " +
                    std::to_string(row.person_id) + ", wave " +
                    std::to_string(row.wave_year) + ")");
  return *v;
}

struct ColumnPlan {
  std::vector<ColumnInfo> columns;
  // Sources, parallel to columns:
  //   kind 0: constant 1 (intercept)
  //   kind 1: lag dummy (level = lag category index)
  //   kind 2: origin-row field (name)
  //   kind 3: origin-row categorical dummy (name, level)
  //   kind 4: time-mean of field over waves 2..T
  //   kind 5: first-wave field value
  //   kind 6: initial-state dummy (level = outcome index)
  //   kind 7: year dummy (level = year)
  //   kind 8: entry-wave dummy (level = year)
  //   kind 9: interaction (parents recorded in ColumnInfo)
  //   kind 10: destination-row field (interview interval)
  struct Source {
    int kind;
    std::string name;
    long long level = 0;
  };
  std::vector<Source> sources;

  void add(ColumnInfo info, Source src) {
    columns.push_back(std::move(info));
    sources.push_back(std::move(src));
  }
};

}  // namespace

int DesignMatrix::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return static_cast<int>(i);
  return -1;
}

Eigen::VectorXd DesignMatrix::column_means() const {
  if (x.rows() == 0) return Eigen::VectorXd::Zero(x.cols());
  return x.colwise().mean();
}

Eigen::VectorXd DesignMatrix::origin_frequencies() const {
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(static_cast<int>(lag_labels.size()));
  for (int s : lag_state) freq[s] += 1.0;
  if (!lag_state.empty()) freq /= static_cast<double>(lag_state.size());
  return freq;
}

std::string DesignMatrix::manifest() const {
  std::ostringstream out;
  out << "outcomes:";
  for (const auto& o : outcome_labels) out << ' ' << o;
  out << "\nlag:";
  for (const auto& l : lag_labels) out << ' ' << l;
  out << "\ncolumns:\n";
  for (const auto& c : columns) {
    out << "  " << c.name << " [" << to_string(c.block) << "]";
    if (c.block == ColumnBlock::Interaction)
      out << " = " << columns[c.lag_parent].name << " * " << columns[c.var_parent].name;
    out << '\n';
  }
  if (columns_init.size() > 0) {
    out << "initial_equation_columns:\n";
    for (const auto& c : columns_init)
      out << "  " << c.name << " [" << to_string(c.block) << "]\n";
  }
  return out.str();
}

namespace {

DesignMatrix build_design_impl(const PanelDataset& ds, const ModelSpec& spec,
                               bool loan_outcome) {
  spec.validate();
  const auto& rows = ds.rows();
  if (rows.empty()) throw EmptyAfterSelectionError("no rows after selection");

  DesignMatrix dm;

  // Outcome and lag label universes.
  if (loan_outcome) {
    dm.outcome_labels = spec.outcomes;  // e.g. {noloan, loan}
  } else if (spec.outcome_source == OutcomeSource::State) {
    dm.outcome_labels = spec.outcomes;
    std::set<std::string> want(spec.outcomes.begin(), spec.outcomes.end());
    if (want != std::set<std::string>{"formal", "informal", "nojob"})
      throw std::invalid_argument("state outcomes must be {formal, informal, nojob}");
  } else {
    dm.outcome_labels = spec.outcomes;
    std::set<std::string> want(spec.outcomes.begin(), spec.outcomes.end());
    if (want != std::set<std::string>{"official", "partly", "unofficial", "nojob"})
      throw std::invalid_argument(
          "pay-type outcomes must be {official, partly, unofficial, nojob}");
  }

  const bool pay_mode = !loan_outcome && spec.outcome_source == OutcomeSource::PayType;
  if (pay_mode) {
    dm.lag_labels = {spec.lagged_omitted};
    for (const auto& o : spec.outcomes)
      if (o != spec.lagged_omitted) dm.lag_labels.push_back(o);
  } else if (spec.disaggregate_informal_lag) {
    if (spec.lagged_omitted != "formal")
      throw std::invalid_argument("disaggregated lag expects 'formal' as omitted category");
    dm.lag_labels = {"formal", "unregistered", "selfemployed", "privateperson", "iea",
                     "nojob"};
  } else {
    dm.lag_labels = {spec.lagged_omitted};
    for (const auto& s : {std::string("formal"), std::string("informal"),
                          std::string("nojob")})
      if (s != spec.lagged_omitted) dm.lag_labels.push_back(s);
    if (dm.lag_labels.size() != 3)
      throw std::invalid_argument("lagged_omitted must be a state label");
  }

  auto outcome_index = [&](const std::string& label) {
    auto it = std::find(dm.outcome_labels.begin(), dm.outcome_labels.end(), label);
    return it == dm.outcome_labels.end()
               ? -1
               : static_cast<int>(it - dm.outcome_labels.begin());
  };
  auto lag_index = [&](const std::string& label) {
    auto it = std::find(dm.lag_labels.begin(), dm.lag_labels.end(), label);
    return it == dm.lag_labels.end() ? -1
                                     : static_cast<int>(it - dm.lag_labels.begin());
  };

  // Scan levels for categorical expansions.
  std::map<std::string, std::set<long long>> levels;
  std::set<long long> year_levels, entry_levels;
  for (std::size_t slot = 0; slot < ds.person_count(); ++slot) {
    auto span = ds.person(slot);
    entry_levels.insert(span.front().wave_year);
    for (std::size_t k = 0; k + 1 < span.size(); ++k)
      year_levels.insert(span[k].wave_year);
    for (const auto& r : span)
      for (const auto& name : {std::string("parent_educ"), std::string("district"),
                               std::string("bank_presence")}) {
        auto v = field_value(r, name);
        if (v) levels[name].insert(static_cast<long long>(*v));
      }
  }

  // Column plan for the transition equation.
  ColumnPlan plan;
  if (spec.intercept)
    plan.add({"intercept", ColumnBlock::Intercept}, {0, "", 0});
  for (std::size_t l = 1; l < dm.lag_labels.size(); ++l)
    plan.add({"lag[" + dm.lag_labels[l] + "]", ColumnBlock::LagState},
             {1, "", static_cast<long long>(l)});

  auto add_field_columns = [&](ColumnPlan& target, const std::string& name,
                               ColumnBlock block, int kind) {
    if (is_categorical_field(name)) {
      if (kind != 2)
        throw std::invalid_argument("categorical field '" + name +
                                    "' cannot enter the mean or initial-value block");
      auto it = levels.find(name);
      if (it == levels.end() || it->second.empty())
        throw DataError("categorical field '" + name + "' has no observed levels");
      long long omit = omitted_level(name, it->second);
      for (long long lvl : it->second) {
        if (lvl == omit) continue;
        target.add({name + "=" + std::to_string(lvl), block}, {3, name, lvl});
      }
    } else {
      std::string nm = name;
      if (block == ColumnBlock::TimeMean) nm = "mean[" + name + "]";
      if (block == ColumnBlock::InitialValue) nm = "init[" + name + "]";
      target.add({nm, block}, {kind, name, 0});
    }
  };

  for (const auto& name : spec.current) {
    // The interview interval of a transition is the elapsed time to the
    // destination interview.
    if (name == "interval_days")
      plan.add({name, ColumnBlock::Current}, {10, name, 0});
    else
      add_field_columns(plan, name, ColumnBlock::Current, 2);
  }

  // Interactions reference current-block columns by (possibly expanded) name.
  for (const auto& var : spec.interaction_vars) {
    std::vector<int> var_cols;
    for (std::size_t c = 0; c < plan.columns.size(); ++c) {
      if (plan.columns[c].block != ColumnBlock::Current) continue;
      const std::string& nm = plan.columns[c].name;
      if (nm == var || (nm.size() > var.size() && nm.compare(0, var.size(), var) == 0 &&
                        nm[var.size()] == '='))
        var_cols.push_back(static_cast<int>(c));
    }
    if (var_cols.empty())
      throw std::invalid_argument("interaction variable '" + var +
                                  "' matches no current column");
    for (int vc : var_cols) {
      for (std::size_t c = 0; c < plan.columns.size(); ++c) {
        if (plan.columns[c].block != ColumnBlock::LagState) continue;
        ColumnInfo info{plan.columns[c].name + "*" + plan.columns[vc].name,
                        ColumnBlock::Interaction, static_cast<int>(c), vc};
        plan.add(std::move(info), {9, "", 0});
      }
    }
  }

  for (const auto& name : spec.constant)
    add_field_columns(plan, name, ColumnBlock::Constant, 2);

  const bool wrs = spec.initial_conditions == InitialConditionsMode::Wrs;
  if (wrs || !spec.time_means.empty()) {
    for (const auto& name : spec.time_means)
      add_field_columns(plan, name, ColumnBlock::TimeMean, 4);
  }
  if (wrs) {
    for (const auto& name : spec.initial_values)
      add_field_columns(plan, name, ColumnBlock::InitialValue, 5);
    for (std::size_t j = 0; j < dm.outcome_labels.size(); ++j) {
      // Initial-state dummies follow the lagged-state omission convention.
      if (dm.outcome_labels[j] == spec.lagged_omitted) continue;
      plan.add({"init_state[" + dm.outcome_labels[j] + "]", ColumnBlock::InitialState},
               {6, "", static_cast<long long>(j)});
    }
  }
  if (spec.year_dummies && year_levels.size() > 1) {
    auto it = year_levels.begin();
    ++it;  // omit the first year
    for (; it != year_levels.end(); ++it)
      plan.add({"year=" + std::to_string(*it), ColumnBlock::Year}, {7, "", *it});
  }
  if (spec.entry_wave_dummies && entry_levels.size() > 1) {
    auto it = entry_levels.begin();
    ++it;
    for (; it != entry_levels.end(); ++it)
      plan.add({"entry=" + std::to_string(*it), ColumnBlock::EntryWave}, {8, "", *it});
  }

  dm.columns = plan.columns;
  const int ncol = static_cast<int>(plan.columns.size());

  // First-period equation plan (Heckman).
  ColumnPlan init_plan;
  const bool heckman = spec.initial_conditions == InitialConditionsMode::Heckman;
  if (heckman) {
    if (spec.intercept) init_plan.add({"intercept", ColumnBlock::Intercept}, {0, "", 0});
    for (const auto& name : spec.constant)
      add_field_columns(init_plan, name, ColumnBlock::Constant, 2);
    for (const auto& name : spec.initial_values)
      add_field_columns(init_plan, name, ColumnBlock::InitialValue, 5);
    for (const auto& name : spec.instruments)
      init_plan.add({name, ColumnBlock::Instrument}, {2, name, 0});
    dm.columns_init = init_plan.columns;
  }

  // Assemble records.
  std::vector<Eigen::VectorXd> record_rows;
  std::vector<Eigen::VectorXd> init_rows;

  for (std::size_t slot = 0; slot < ds.person_count(); ++slot) {
    auto span = ds.person(slot);
    if (span.size() < 2) continue;

    // Per-person derived quantities.
    const ObservationRow& first = span.front();
    std::map<std::string, double> means;
    auto mean_over_later_waves = [&](const std::string& name) {
      double acc = 0.0;
      long cnt = 0;
      for (std::size_t k = 1; k < span.size(); ++k) {
        acc += require_field(span[k], name);
        ++cnt;
      }
      return acc / static_cast<double>(cnt);
    };

    int init_outcome = -1;
    if (!loan_outcome) {
      std::string lbl = spec.outcome_source == OutcomeSource::State
                            ? (first.state ? state_label(*first.state) : std::string())
                            : (first.pay_type ? pay_label(*first.pay_type) : std::string());
      init_outcome = lbl.empty() ? -1 : outcome_index(lbl);
    }

    std::vector<Eigen::VectorXd> person_records;
    std::vector<int> person_outcomes, person_lags;

    for (std::size_t k = 0; k + 1 < span.size(); ++k) {
      const ObservationRow& origin = span[k];
      const ObservationRow& dest = span[k + 1];

      // Outcome.
      int out_idx = -1;
      if (loan_outcome) {
        if (origin.loan_intent.value_or(1) != 0) continue;  // planners are excluded
        if (!dest.loan_taken) continue;
        long long taken = *dest.loan_taken;
        if (taken < 0 || taken >= static_cast<long long>(dm.outcome_labels.size()))
          throw DataError("loan outcome out of range: " + std::to_string(taken));
        out_idx = static_cast<int>(taken);
      } else if (spec.outcome_source == OutcomeSource::State) {
        if (!dest.state) continue;
        out_idx = outcome_index(state_label(*dest.state));
      } else {
        if (!dest.pay_type || !origin.pay_type) continue;
        out_idx = outcome_index(pay_label(*dest.pay_type));
      }
      if (out_idx < 0) continue;

      // Lag category.
      int lag_idx = -1;
      if (pay_mode) {
        lag_idx = lag_index(pay_label(*origin.pay_type));
      } else {
        if (!origin.state) continue;
        if (spec.disaggregate_informal_lag && *origin.state == LaborState::Informal) {
          auto sub = origin.informal_subtype.value_or(InformalSubtype::Unknown);
          if (sub == InformalSubtype::Unknown) continue;  // subtype required
          lag_idx = lag_index(subtype_label(sub));
        } else {
          lag_idx = lag_index(state_label(*origin.state));
        }
      }
      if (lag_idx < 0) continue;

      Eigen::VectorXd row = Eigen::VectorXd::Zero(ncol);
      for (int c = 0; c < ncol; ++c) {
        const auto& src = plan.sources[c];
        switch (src.kind) {
          case 0: row[c] = 1.0; break;
          case 1: row[c] = (lag_idx == src.level) ? 1.0 : 0.0; break;
          case 2: row[c] = require_field(origin, src.name); break;
          case 3:
            row[c] = (static_cast<long long>(require_field(origin, src.name)) ==
                      src.level)
                         ? 1.0
                         : 0.0;
            break;
          case 4: {
            auto it = means.find(src.name);
            if (it == means.end())
              it = means.emplace(src.name, mean_over_later_waves(src.name)).first;
            row[c] = it->second;
            break;
          }
          case 5: row[c] = require_field(first, src.name); break;
          case 6: row[c] = (init_outcome == src.level) ? 1.0 : 0.0; break;
          case 7: row[c] = (origin.wave_year == src.level) ? 1.0 : 0.0; break;
          case 8: row[c] = (first.wave_year == src.level) ? 1.0 : 0.0; break;
          case 10: row[c] = require_field(dest, src.name); break;
          default: break;  // interactions filled below
        }
      }
      for (int c = 0; c < ncol; ++c)
        if (plan.sources[c].kind == 9)
          row[c] = row[plan.columns[c].lag_parent] * row[plan.columns[c].var_parent];

      person_records.push_back(std::move(row));
      person_outcomes.push_back(out_idx);
      person_lags.push_back(lag_idx);
    }

    if (person_records.empty()) continue;

    // Mean columns for categorical expansions are not supported; the means
    // block is restricted to continuous fields.
    dm.person_first.push_back(record_rows.size());
    dm.person_ids.push_back(first.person_id);
    for (std::size_t r = 0; r < person_records.size(); ++r) {
      record_rows.push_back(std::move(person_records[r]));
      dm.outcome.push_back(person_outcomes[r]);
      dm.lag_state.push_back(person_lags[r]);
      dm.cluster.push_back(first.person_id);
    }

    if (heckman) {
      if (init_outcome < 0)
        throw DataError("first-period outcome missing for person " +
                        std::to_string(first.person_id));
      Eigen::VectorXd irow = Eigen::VectorXd::Zero(static_cast<int>(init_plan.columns.size()));
      for (std::size_t c = 0; c < init_plan.columns.size(); ++c) {
        const auto& src = init_plan.sources[c];
        switch (src.kind) {
          case 0: irow[static_cast<int>(c)] = 1.0; break;
          case 2:
          case 5: irow[static_cast<int>(c)] = require_field(first, src.name); break;
          case 3:
            irow[static_cast<int>(c)] =
                (static_cast<long long>(require_field(first, src.name)) == src.level)
                    ? 1.0
                    : 0.0;
            break;
          default: break;
        }
      }
      init_rows.push_back(std::move(irow));
      dm.outcome_init.push_back(init_outcome);
    }
  }

  if (record_rows.empty())
    throw EmptyAfterSelectionError("no transition records could be formed");
  dm.person_first.push_back(record_rows.size());

  dm.x.resize(static_cast<long>(record_rows.size()), ncol);
  for (std::size_t r = 0; r < record_rows.size(); ++r) dm.x.row(static_cast<long>(r)) = record_rows[r];

  if (heckman) {
    dm.x_init.resize(static_cast<long>(init_rows.size()),
                     static_cast<long>(dm.columns_init.size()));
    for (std::size_t r = 0; r < init_rows.size(); ++r)
      dm.x_init.row(static_cast<long>(r)) = init_rows[r];
  }
  return dm;
}

}  // namespace

DesignMatrix build_design(const PanelDataset& ds, const ModelSpec& spec) {
  return build_design_impl(ds, spec, false);
}

DesignMatrix build_loan_design(const PanelDataset& ds, const ModelSpec& spec) {
  return build_design_impl(ds, spec, true);
}

Eigen::VectorXd design_row_for_origin(const std::vector<ColumnInfo>& columns,
                                      Eigen::VectorXd base, int origin) {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].block != ColumnBlock::LagState) continue;
    // Lag dummy columns appear in lag-label order starting at category 1.
    base[static_cast<int>(c)] = 0.0;
  }
  int lag_pos = 0;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].block != ColumnBlock::LagState) continue;
    ++lag_pos;
    if (lag_pos == origin) base[static_cast<int>(c)] = 1.0;
  }
  for (std::size_t c = 0; c < columns.size(); ++c)
    if (columns[c].block == ColumnBlock::Interaction)
      base[static_cast<int>(c)] =
          base[columns[c].lag_parent] * base[columns[c].var_parent];
  return base;
}

}  // namespace dynlab
