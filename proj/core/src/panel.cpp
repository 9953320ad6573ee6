#include "dynlab/panel.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "dynlab/csv.hpp"
#include "dynlab/rng.hpp"

namespace dynlab {

std::string to_string(LaborState s) {
  switch (s) {
    case LaborState::Formal: return "F";
    case LaborState::Informal: return "I";
    case LaborState::NoJob: return "O";
  }
  return "?";
}

std::string to_string(InformalSubtype s) {
  switch (s) {
    case InformalSubtype::UnregisteredEmployee: return "UE";
    case InformalSubtype::SelfEmployed: return "SE";
    case InformalSubtype::PrivatePerson: return "PP";
    case InformalSubtype::Iea: return "IEA";
    case InformalSubtype::Unknown: return "UNK";
  }
  return "?";
}

std::string to_string(PayType s) {
  switch (s) {
    case PayType::OfficialOnly: return "1";
    case PayType::PartlyUnofficial: return "2";
    case PayType::UnofficialOnly: return "3";
    case PayType::NoJob: return "4";
  }
  return "?";
}

namespace {

std::optional<LaborState> parse_state(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  if (s == "F") return LaborState::Formal;
  if (s == "I") return LaborState::Informal;
  if (s == "O") return LaborState::NoJob;
  throw RowTypeError(line, "unknown state code '" + s + "'");
}

std::optional<InformalSubtype> parse_subtype(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  if (s == "UE") return InformalSubtype::UnregisteredEmployee;
  if (s == "SE") return InformalSubtype::SelfEmployed;
  if (s == "PP") return InformalSubtype::PrivatePerson;
  if (s == "IEA") return InformalSubtype::Iea;
  if (s == "UNK") return InformalSubtype::Unknown;
  throw RowTypeError(line, "unknown informal subtype '" + s + "'");
}

std::optional<PayType> parse_pay(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  if (s == "1") return PayType::OfficialOnly;
  if (s == "2") return PayType::PartlyUnofficial;
  if (s == "3") return PayType::UnofficialOnly;
  if (s == "4") return PayType::NoJob;
  throw RowTypeError(line, "unknown pay type '" + s + "'");
}

void check_row_invariants(const ObservationRow& row, std::size_t line) {
  if (row.informal_subtype && row.state != LaborState::Informal)
    throw RowTypeError(line, "informal subtype set on a non-informal row");
  if (row.pay_type && row.informal_subtype == InformalSubtype::Iea)
    throw RowTypeError(line, "pay type recode is undefined for IEA workers");
}

}  // namespace

std::optional<double> field_value(const ObservationRow& row, const std::string& name) {
  auto opt_ll = [](const std::optional<long long>& v) -> std::optional<double> {
    if (v) return static_cast<double>(*v);
    return std::nullopt;
  };
  if (name == "age") return row.age;
  if (name == "school_years") return row.school_years;
  if (name == "married") return row.married;
  if (name == "hh_size") return row.hh_size;
  if (name == "kids") return row.kids;
  if (name == "log_consumption") return row.log_consumption;
  if (name == "interval_days") return row.interval_days;
  if (name == "female") return row.female;
  if (name == "russian") return row.russian;
  if (name == "parent_educ") return opt_ll(row.parent_educ);
  if (name == "pop_log") return row.pop_log;
  if (name == "urban") return row.urban;
  if (name == "district") return opt_ll(row.district);
  if (name == "cma_index") return row.cma_index;
  if (name == "bank_presence") return opt_ll(row.bank_presence);
  if (name == "dist_sber_km") return row.dist_sber_km;
  if (name == "dist_other_km") return row.dist_other_km;
  if (name == "offices_per_1000") return row.offices_per_1000;
  if (name == "loan_taken") return opt_ll(row.loan_taken);
  if (name == "loan_intent") return opt_ll(row.loan_intent);
  if (name == "rel_earn_17") return row.rel_earn_17;
  if (name == "govt_share") return row.govt_share;
  if (name == "informal_share") return row.informal_share;
  if (name == "soe_closed") return opt_ll(row.soe_closed);
  if (name == "age_sq") {
    if (row.age) return (*row.age) * (*row.age) / 100.0;
    return std::nullopt;
  }
  throw DataError("unknown field name: " + name);
}

const std::vector<std::string>& numeric_field_names() {
  static const std::vector<std::string> names = {
      "age",          "school_years", "married",       "hh_size",
      "kids",         "log_consumption", "interval_days", "female",
      "russian",      "parent_educ",  "pop_log",       "urban",
      "district",     "cma_index",    "bank_presence", "dist_sber_km",
      "dist_other_km", "offices_per_1000", "loan_taken", "loan_intent",
      "rel_earn_17",  "govt_share",   "informal_share", "soe_closed"};
  return names;
}

const std::vector<std::string>& panel_csv_columns() {
  static const std::vector<std::string> cols = {
      "person_id",    "year",          "state",         "informal_subtype",
      "pay_type",     "age",           "female",        "russian",
      "parent_educ",  "school_years",  "married",       "hh_size",
      "kids",         "log_consumption", "pop_log",     "urban",
      "district",     "interval_days", "cma_index",     "bank_presence",
      "dist_sber_km", "dist_other_km", "offices_per_1000", "loan_taken",
      "loan_intent",  "rel_earn_17",   "govt_share",    "informal_share",
      "soe_closed"};
  return cols;
}

void PanelDataset::rebuild_offsets() {
  offsets_.clear();
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (i == 0 || rows_[i].person_id != prev) offsets_.push_back(i);
    prev = rows_[i].person_id;
  }
  offsets_.push_back(rows_.size());
  if (rows_.empty()) offsets_.clear();
}

std::span<const ObservationRow> PanelDataset::person(std::size_t slot) const {
  return {rows_.data() + offsets_[slot], offsets_[slot + 1] - offsets_[slot]};
}

PanelDataset PanelDataset::from_rows(std::vector<ObservationRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.person_id != b.person_id) return a.person_id < b.person_id;
    return a.wave_year < b.wave_year;
  });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].person_id == rows[i - 1].person_id &&
        rows[i].wave_year == rows[i - 1].wave_year) {
      throw DuplicateKeyError("duplicate (person, wave): person " +
                              std::to_string(rows[i].person_id) + ", wave " +
                              std::to_string(rows[i].wave_year));
    }
  }
  PanelDataset ds;
  ds.rows_ = std::move(rows);
  ds.rebuild_offsets();
  return ds;
}

PanelDataset load_panel(std::istream& in) {
  CsvTable table = read_csv(in);
  for (const auto& col : panel_csv_columns())
    if (table.column(col) < 0) throw MissingColumnError("missing column: " + col);

  auto col = [&](const std::string& name) { return table.require_column(name); };
  const int c_person = col("person_id"), c_year = col("year"), c_state = col("state");
  const int c_sub = col("informal_subtype"), c_pay = col("pay_type");

  std::vector<ObservationRow> rows;
  rows.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    const std::size_t line = r + 2;  // header is line 1
    ObservationRow row;
    try {
      auto pid = parse_int(f[c_person]);
      auto year = parse_int(f[c_year]);
      if (!pid || !year) throw CsvError("person_id and year are required");
      row.person_id = *pid;
      row.wave_year = static_cast<int>(*year);
      row.state = parse_state(f[c_state], line);
      row.informal_subtype = parse_subtype(f[c_sub], line);
      row.pay_type = parse_pay(f[c_pay], line);
      row.age = parse_double(f[col("age")]);
      row.female = parse_double(f[col("female")]);
      row.russian = parse_double(f[col("russian")]);
      row.parent_educ = parse_int(f[col("parent_educ")]);
      row.school_years = parse_double(f[col("school_years")]);
      row.married = parse_double(f[col("married")]);
      row.hh_size = parse_double(f[col("hh_size")]);
      row.kids = parse_double(f[col("kids")]);
      row.log_consumption = parse_double(f[col("log_consumption")]);
      row.pop_log = parse_double(f[col("pop_log")]);
      row.urban = parse_double(f[col("urban")]);
      row.district = parse_int(f[col("district")]);
      row.interval_days = parse_double(f[col("interval_days")]);
      row.cma_index = parse_double(f[col("cma_index")]);
      row.bank_presence = parse_int(f[col("bank_presence")]);
      row.dist_sber_km = parse_double(f[col("dist_sber_km")]);
      row.dist_other_km = parse_double(f[col("dist_other_km")]);
      row.offices_per_1000 = parse_double(f[col("offices_per_1000")]);
      row.loan_taken = parse_int(f[col("loan_taken")]);
      row.loan_intent = parse_int(f[col("loan_intent")]);
      row.rel_earn_17 = parse_double(f[col("rel_earn_17")]);
      row.govt_share = parse_double(f[col("govt_share")]);
      row.informal_share = parse_double(f[col("informal_share")]);
      row.soe_closed = parse_int(f[col("soe_closed")]);
    } catch (const CsvError& e) {
      throw RowTypeError(line, e.what());
    }
    check_row_invariants(row, line);
    rows.push_back(std::move(row));
  }
  return PanelDataset::from_rows(std::move(rows));
}

PanelDataset load_panel_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file: " + path);
  return load_panel(in);
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}
std::string fmt_opt(const std::optional<long long>& v) {
  return v ? std::to_string(*v) : std::string();
}

}  // namespace

void write_panel(std::ostream& out, const PanelDataset& ds) {
  CsvTable table;
  table.header = panel_csv_columns();
  table.rows.reserve(ds.rows().size());
  for (const auto& r : ds.rows()) {
    std::vector<std::string> f;
    f.reserve(table.header.size());
    f.push_back(std::to_string(r.person_id));
    f.push_back(std::to_string(r.wave_year));
    f.push_back(r.state ? to_string(*r.state) : "");
    f.push_back(r.informal_subtype ? to_string(*r.informal_subtype) : "");
    f.push_back(r.pay_type ? to_string(*r.pay_type) : "");
    f.push_back(fmt_opt(r.age));
    f.push_back(fmt_opt(r.female));
    f.push_back(fmt_opt(r.russian));
    f.push_back(fmt_opt(r.parent_educ));
    f.push_back(fmt_opt(r.school_years));
    f.push_back(fmt_opt(r.married));
    f.push_back(fmt_opt(r.hh_size));
    f.push_back(fmt_opt(r.kids));
    f.push_back(fmt_opt(r.log_consumption));
    f.push_back(fmt_opt(r.pop_log));
    f.push_back(fmt_opt(r.urban));
    f.push_back(fmt_opt(r.district));
    f.push_back(fmt_opt(r.interval_days));
    f.push_back(fmt_opt(r.cma_index));
    f.push_back(fmt_opt(r.bank_presence));
    f.push_back(fmt_opt(r.dist_sber_km));
    f.push_back(fmt_opt(r.dist_other_km));
    f.push_back(fmt_opt(r.offices_per_1000));
    f.push_back(fmt_opt(r.loan_taken));
    f.push_back(fmt_opt(r.loan_intent));
    f.push_back(fmt_opt(r.rel_earn_17));
    f.push_back(fmt_opt(r.govt_share));
    f.push_back(fmt_opt(r.informal_share));
    f.push_back(fmt_opt(r.soe_closed));
    table.rows.push_back(std::move(f));
  }
  write_csv(out, table);
}

void write_panel_file(const std::string& path, const PanelDataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open file for writing: " + path);
  write_panel(out, ds);
}

const std::vector<std::string>& default_required_covariates() {
  static const std::vector<std::string> covs = {
      "age",      "female",  "russian", "parent_educ", "school_years",
      "married",  "hh_size", "kids",    "log_consumption", "pop_log",
      "urban",    "district", "interval_days", "cma_index"};
  return covs;
}

PanelDataset apply_selection_rules(const PanelDataset& ds, double age_lo, double age_hi,
                                   std::span<const std::string> required_covariates) {
  ExclusionLog log;
  const auto& rows = ds.rows();
  const std::size_t n = rows.size();
  // 0 = keep; otherwise the step (1-5) that removed the row.
  std::vector<int> removed(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    if (!rows[i].age || *rows[i].age < age_lo || *rows[i].age > age_hi) {
      removed[i] = 1;
      ++log.age_range;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!removed[i] && !rows[i].state) {
      removed[i] = 2;
      ++log.missing_state;
    }
  }
  // Step 3: next raw interview exists but was dropped above.
  for (std::size_t slot = 0; slot < ds.person_count(); ++slot) {
    auto span = ds.person(slot);
    const std::size_t base = span.data() - rows.data();
    for (std::size_t k = 0; k + 1 < span.size(); ++k) {
      if (!removed[base + k] && removed[base + k + 1] != 0) {
        removed[base + k] = 3;
        ++log.missing_next_state;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    for (const auto& name : required_covariates) {
      if (!field_value(rows[i], name)) {
        removed[i] = 4;
        ++log.missing_covariates;
        break;
      }
    }
  }
  // Step 5: persons with fewer than two remaining rows.
  for (std::size_t slot = 0; slot < ds.person_count(); ++slot) {
    auto span = ds.person(slot);
    const std::size_t base = span.data() - rows.data();
    std::size_t live = 0;
    for (std::size_t k = 0; k < span.size(); ++k)
      if (!removed[base + k]) ++live;
    if (live == 1) {
      for (std::size_t k = 0; k < span.size(); ++k) {
        if (!removed[base + k]) {
          removed[base + k] = 5;
          ++log.single_observation;
        }
      }
    }
  }

  std::vector<ObservationRow> kept;
  kept.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!removed[i]) kept.push_back(rows[i]);
  PanelDataset out = PanelDataset::from_rows(std::move(kept));
  out.exclusions_ = log;
  return out;
}

}  // namespace dynlab

namespace dynlab {

PanelDataset restrict_to_household_heads(
    const PanelDataset& ds,
    const std::map<std::int64_t, std::int64_t>& household_of_person, HeadRule rule,
    std::uint64_t seed) {
  struct Member {
    std::int64_t person;
    double age;
    bool female;
    double earn_proxy;
  };
  std::map<std::int64_t, std::vector<Member>> households;
  for (std::size_t slot = 0; slot < ds.person_count(); ++slot) {
    const ObservationRow& first = ds.person(slot).front();
    auto it = household_of_person.find(first.person_id);
    std::int64_t hh = it == household_of_person.end() ? -first.person_id - 1 : it->second;
    households[hh].push_back({first.person_id, first.age.value_or(0.0),
                              first.female.value_or(0.0) != 0.0,
                              first.log_consumption.value_or(0.0)});
  }

  std::set<std::int64_t> heads;
  for (auto& [hh, members] : households) {
    std::sort(members.begin(), members.end(),
              [](const Member& a, const Member& b) { return a.person < b.person; });
    std::int64_t chosen = members.front().person;
    switch (rule) {
      case HeadRule::Random: {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(hh >= 0 ? hh : -hh));
        chosen = members[rng.uniform_int(members.size())].person;
        break;
      }
      case HeadRule::OldestMale: {
        const Member* best = nullptr;
        for (const auto& m : members)
          if (!m.female && (!best || m.age > best->age)) best = &m;
        if (!best)
          for (const auto& m : members)
            if (!best || m.age > best->age) best = &m;
        chosen = best->person;
        break;
      }
      case HeadRule::HighestEarner: {
        const Member* best = nullptr;
        for (const auto& m : members)
          if (!best || m.earn_proxy > best->earn_proxy) best = &m;
        chosen = best->person;
        break;
      }
    }
    heads.insert(chosen);
  }

  std::vector<ObservationRow> kept;
  for (const auto& row : ds.rows())
    if (heads.count(row.person_id)) kept.push_back(row);
  return PanelDataset::from_rows(std::move(kept));
}

}  // namespace dynlab
