#include "dynlab/descriptives.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace dynlab {

namespace {

std::string origin_label(const ObservationRow& row, bool disaggregate) {
  if (!row.state) return {};
  switch (*row.state) {
    case LaborState::Formal: return "formal";
    case LaborState::NoJob: return "nojob";
    case LaborState::Informal: break;
  }
  if (!disaggregate) return "informal";
  switch (row.informal_subtype.value_or(InformalSubtype::Unknown)) {
    case InformalSubtype::UnregisteredEmployee: return "unregistered";
    case InformalSubtype::SelfEmployed: return "selfemployed";
    case InformalSubtype::PrivatePerson: return "privateperson";
    case InformalSubtype::Iea: return "iea";
    case InformalSubtype::Unknown: return {};  // cannot be placed
  }
  return {};
}

std::string dest_label(const ObservationRow& row) {
  if (!row.state) return {};
  switch (*row.state) {
    case LaborState::Formal: return "formal";
    case LaborState::Informal: return "informal";
    case LaborState::NoJob: return "nojob";
  }
  return {};
}

}  // namespace

TransitionSplitter borrower_splitter() {
  return [](const ObservationRow&, const ObservationRow& dest)
             -> std::optional<std::string> {
    if (!dest.loan_taken) return std::nullopt;
    return *dest.loan_taken ? "borrower" : "nonborrower";
  };
}

std::vector<TransitionMatrix> transition_matrix(const PanelDataset& ds,
                                                const TransitionSplitter& split,
                                                bool disaggregate_informal) {
  std::vector<std::string> origins =
      disaggregate_informal
          ? std::vector<std::string>{"formal", "unregistered", "selfemployed",
                                     "privateperson", "iea", "nojob"}
          : std::vector<std::string>{"formal", "informal", "nojob"};
  std::vector<std::string> destinations = {"formal", "informal", "nojob"};

  auto origin_idx = [&](const std::string& s) {
    auto it = std::find(origins.begin(), origins.end(), s);
    return it == origins.end() ? -1 : static_cast<int>(it - origins.begin());
  };
  auto dest_idx = [&](const std::string& s) {
    auto it = std::find(destinations.begin(), destinations.end(), s);
    return it == destinations.end() ? -1 : static_cast<int>(it - destinations.begin());
  };

  std::map<std::string, Eigen::MatrixXi> counts;
  for (std::size_t slot = 0; slot < ds.person_count(); ++slot) {
    auto span = ds.person(slot);
    for (std::size_t k = 0; k + 1 < span.size(); ++k) {
      const auto& o = span[k];
      const auto& d = span[k + 1];
      std::string ol = origin_label(o, disaggregate_informal);
      std::string dl = dest_label(d);
      if (ol.empty() || dl.empty()) continue;
      std::string group = "all";
      if (split) {
        auto g = split(o, d);
        if (!g) continue;
        group = *g;
      }
      auto [it, inserted] = counts.try_emplace(
          group, Eigen::MatrixXi::Zero(static_cast<int>(origins.size()),
                                       static_cast<int>(destinations.size())));
      it->second(origin_idx(ol), dest_idx(dl)) += 1;
    }
  }

  std::vector<TransitionMatrix> out;
  for (auto& [group, c] : counts) {
    TransitionMatrix tm;
    tm.group = group;
    tm.origins = origins;
    tm.destinations = destinations;
    tm.counts = c;
    tm.prob = Eigen::MatrixXd::Zero(c.rows(), c.cols());
    tm.origin_present.assign(origins.size(), false);
    tm.n_transitions = c.sum();
    for (int r = 0; r < c.rows(); ++r) {
      long row_total = c.row(r).sum();
      if (row_total == 0) continue;  // absent row, not 0/0
      tm.origin_present[r] = true;
      for (int j = 0; j < c.cols(); ++j)
        tm.prob(r, j) = static_cast<double>(c(r, j)) / static_cast<double>(row_total);
    }
    out.push_back(std::move(tm));
  }
  return out;
}

namespace {

bool looks_binary(const std::vector<double>& values) {
  for (double v : values)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

}  // namespace

SummaryTable summary_stats(const PanelDataset& ds,
                           const std::vector<std::string>& variables) {
  SummaryTable table;
  table.states = {"formal", "informal", "nojob"};
  auto state_idx = [](LaborState s) {
    switch (s) {
      case LaborState::Formal: return 0;
      case LaborState::Informal: return 1;
      case LaborState::NoJob: return 2;
    }
    return -1;
  };

  for (const auto& var : variables) {
    std::array<std::vector<double>, 3> samples;
    for (const auto& row : ds.rows()) {
      if (!row.state) continue;
      auto v = field_value(row, var);
      if (!v) continue;
      samples[state_idx(*row.state)].push_back(*v);
    }
    SummaryRow out;
    out.variable = var;

    bool binary = true;
    for (const auto& s : samples)
      if (!looks_binary(s)) binary = false;

    std::array<double, 3> means{}, vars{};
    for (int g = 0; g < 3; ++g) {
      SummaryCell cell;
      cell.n = static_cast<long>(samples[g].size());
      if (cell.n > 0) {
        double sum = 0.0;
        for (double v : samples[g]) sum += v;
        cell.mean = sum / static_cast<double>(cell.n);
        double ss = 0.0;
        for (double v : samples[g]) ss += (v - cell.mean) * (v - cell.mean);
        double var = cell.n > 1 ? ss / static_cast<double>(cell.n - 1) : 0.0;
        means[g] = cell.mean;
        vars[g] = var;
        if (!binary) cell.sd = std::sqrt(var);
      }
      out.by_state.push_back(cell);
    }

    out.welch_t.resize(3);
    for (int g = 1; g < 3; ++g) {
      if (out.by_state[0].n > 1 && out.by_state[g].n > 1) {
        double denom = vars[0] / out.by_state[0].n + vars[g] / out.by_state[g].n;
        if (denom > 0.0)
          out.welch_t[g] = (means[0] - means[g]) / std::sqrt(denom);
      }
    }
    table.rows.push_back(std::move(out));
  }
  return table;
}

OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const long n = x.rows();
  const long p = x.cols();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  OlsFit fit;
  fit.coef = qr.solve(y);
  fit.fitted = x * fit.coef;
  Eigen::VectorXd resid = y - fit.fitted;
  long dof = std::max<long>(n - p, 1);
  fit.sigma2 = resid.squaredNorm() / static_cast<double>(dof);

  // (X'X)^-1 from the pivoted R factor.
  Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  Eigen::MatrixXd rinv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd xtx_inv_permuted = rinv * rinv.transpose();
  Eigen::MatrixXd perm = qr.colsPermutation();
  Eigen::MatrixXd xtx_inv = perm * xtx_inv_permuted * perm.transpose();
  fit.se = (fit.sigma2 * xtx_inv.diagonal()).cwiseMax(0.0).cwiseSqrt();
  return fit;
}

namespace {

struct EventObservation {
  double outcome;
  int k;
  double age;
  int year;
};

EventStudyResult run_event_regression(std::vector<EventObservation> obs, int window,
                                      const std::string& label, long n_persons) {
  if (obs.empty())
    throw InsufficientEventsError("no usable observations for the event study");

  std::set<int> years;
  for (const auto& o : obs) years.insert(o.year);
  std::set<int> ks;
  for (const auto& o : obs) ks.insert(o.k);

  // Columns: intercept, k dummies (k != 0), age quartic, year dummies (first
  // year omitted).
  std::vector<int> k_list(ks.begin(), ks.end());
  std::vector<int> year_list(years.begin(), years.end());
  std::vector<int> k_cols;
  for (int k : k_list)
    if (k != 0) k_cols.push_back(k);

  const long n = static_cast<long>(obs.size());
  const long p = 1 + static_cast<long>(k_cols.size()) + 4 +
                 static_cast<long>(year_list.size() > 1 ? year_list.size() - 1 : 0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, p);
  Eigen::VectorXd y(n);
  for (long i = 0; i < n; ++i) {
    const auto& o = obs[i];
    long c = 0;
    x(i, c++) = 1.0;
    for (int k : k_cols) x(i, c++) = (o.k == k) ? 1.0 : 0.0;
    double a = o.age / 10.0;  // scaled to keep the quartic well conditioned
    x(i, c++) = a;
    x(i, c++) = a * a;
    x(i, c++) = a * a * a;
    x(i, c++) = a * a * a * a;
    for (std::size_t yidx = 1; yidx < year_list.size(); ++yidx)
      x(i, c++) = (o.year == year_list[yidx]) ? 1.0 : 0.0;
    y[i] = o.outcome;
  }

  OlsFit fit = ols(x, y);

  // Average fitted outcome among the omitted-category rows.
  double base = 0.0;
  long base_n = 0;
  for (long i = 0; i < n; ++i) {
    if (obs[i].k == 0) {
      base += fit.fitted[i];
      ++base_n;
    }
  }
  if (base_n == 0)
    throw InsufficientEventsError("no observations at the event year");
  base /= static_cast<double>(base_n);

  EventStudyResult res;
  res.outcome = label;
  res.base_level = base;
  res.n_obs = n;
  res.n_persons = n_persons;
  for (int k = -window; k <= window; ++k) {
    if (!ks.count(k)) continue;
    EventStudyPoint pt;
    pt.k = k;
    if (k == 0) {
      pt.coef = 0.0;
      pt.se = 0.0;
    } else {
      long c = 1;
      for (std::size_t j = 0; j < k_cols.size(); ++j, ++c)
        if (k_cols[j] == k) break;
      pt.coef = fit.coef[c];
      pt.se = fit.se[c];
    }
    pt.plotted = pt.coef + base;
    res.points.push_back(pt);
  }
  return res;
}

}  // namespace

EventStudy event_study(const PanelDataset& ds, int window) {
  if (window < 1) throw std::invalid_argument("event_study: window must be positive");

  std::vector<EventObservation> entry_obs, switch_obs;
  long n_event_persons = 0;

  for (std::size_t slot = 0; slot < ds.person_count(); ++slot) {
    auto span = ds.person(slot);
    std::optional<int> event_year;
    for (const auto& row : span) {
      if (row.loan_taken && *row.loan_taken == 1) {
        event_year = row.wave_year;
        break;
      }
    }
    if (!event_year) continue;
    ++n_event_persons;
    const bool left_censored = span.front().loan_taken && *span.front().loan_taken == 1;

    for (std::size_t t = 0; t + 1 < span.size(); ++t) {
      const auto& origin = span[t];
      const auto& dest = span[t + 1];
      if (!origin.state || !dest.state || !origin.age) continue;
      // A transition is dated by its destination interview, which is where
      // the loan over the interval is reported; the event-coincident switch
      // therefore lands at k = 0.
      int k = dest.wave_year - *event_year;
      if (k < -window || k > window) continue;
      if (left_censored && k < 0) continue;

      double entered = (*origin.state == LaborState::Informal &&
                        *dest.state == LaborState::Formal)
                           ? 1.0
                           : 0.0;
      entry_obs.push_back({entered, k, *origin.age, origin.wave_year});
      if (*origin.state == LaborState::Informal) {
        double switched = (*dest.state == LaborState::Formal) ? 1.0 : 0.0;
        switch_obs.push_back({switched, k, *origin.age, origin.wave_year});
      }
    }
  }

  if (n_event_persons == 0)
    throw InsufficientEventsError("no person with an observed first loan");

  EventStudy out;
  out.entry_rate =
      run_event_regression(std::move(entry_obs), window, "entry_rate", n_event_persons);
  out.switching =
      run_event_regression(std::move(switch_obs), window, "switching", n_event_persons);
  return out;
}

}  // namespace dynlab
