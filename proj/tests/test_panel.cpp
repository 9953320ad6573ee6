#include <doctest.h>

#include <sstream>

#include "dynlab/design.hpp"
#include "dynlab/panel.hpp"

using namespace dynlab;

namespace {

// Fully populated row that survives every selection rule.
ObservationRow make_row(std::int64_t person, int year,
                        std::optional<LaborState> state = LaborState::Formal) {
  ObservationRow r;
  r.person_id = person;
  r.wave_year = year;
  r.state = state;
  r.age = 30 + (year % 10);
  r.female = 0;
  r.russian = 1;
  r.parent_educ = 1;
  r.school_years = 12;
  r.married = 1;
  r.hh_size = 3;
  r.kids = 1;
  r.log_consumption = 3.5;
  r.pop_log = 4.0;
  r.urban = 1;
  r.district = 1;
  r.interval_days = 365;
  r.cma_index = 0.2;
  r.bank_presence = 3;
  r.dist_sber_km = 0;
  r.dist_other_km = 0;
  r.offices_per_1000 = 0.2;
  r.loan_taken = 0;
  r.loan_intent = 0;
  return r;
}

std::string header_line() {
  std::string line;
  for (const auto& c : panel_csv_columns()) {
    if (!line.empty()) line += ',';
    line += c;
  }
  return line;
}

}  // namespace

TEST_CASE("empty file with a valid header loads to zero persons") {
  std::istringstream in(header_line() + "\n");
  auto ds = load_panel(in);
  CHECK(ds.person_count() == 0);
  CHECK(ds.rows().empty());
}

TEST_CASE("waves are stored sorted within person") {
  std::vector<ObservationRow> rows = {make_row(1, 2006), make_row(1, 2008),
                                      make_row(1, 2007)};
  auto ds = PanelDataset::from_rows(rows);
  auto span = ds.person(0);
  CHECK(span[0].wave_year == 2006);
  CHECK(span[1].wave_year == 2007);
  CHECK(span[2].wave_year == 2008);
}

TEST_CASE("formal row with an informal subtype is rejected") {
  std::ostringstream out;
  auto row = make_row(1, 2006);
  row.state = LaborState::Formal;
  auto ds = PanelDataset::from_rows({row});
  write_panel(out, ds);
  std::string text = out.str();
  // Inject the subtype into the serialized row.
  auto pos = text.find("2006,F,,");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 8, "2006,F,UE,");
  std::istringstream in(text);
  CHECK_THROWS_AS(load_panel(in), RowTypeError);
}

TEST_CASE("missing column and duplicate key are reported") {
  std::istringstream in("person_id,year\n1,2006\n");
  CHECK_THROWS_AS(load_panel(in), MissingColumnError);
  CHECK_THROWS_AS(PanelDataset::from_rows({make_row(1, 2006), make_row(1, 2006)}),
                  DuplicateKeyError);
}

TEST_CASE("serialization round trip is idempotent") {
  std::vector<ObservationRow> rows;
  auto r1 = make_row(3, 2007, LaborState::Informal);
  r1.informal_subtype = InformalSubtype::SelfEmployed;
  r1.rel_earn_17 = -0.0625;
  rows.push_back(r1);
  auto r2 = make_row(3, 2009, std::nullopt);
  r2.kids.reset();
  rows.push_back(r2);
  rows.push_back(make_row(1, 2008, LaborState::NoJob));

  auto ds = PanelDataset::from_rows(rows);
  std::ostringstream first;
  write_panel(first, ds);
  std::istringstream back(first.str());
  auto ds2 = load_panel(back);
  std::ostringstream second;
  write_panel(second, ds2);
  CHECK(first.str() == second.str());
}

TEST_CASE("single valid observation is removed at the last step") {
  std::vector<ObservationRow> rows = {make_row(1, 2006), make_row(1, 2007),
                                      make_row(2, 2006)};
  auto ds = PanelDataset::from_rows(rows);
  auto selected = apply_selection_rules(ds);
  CHECK(selected.person_count() == 1);
  CHECK(selected.exclusions().single_observation == 1);
  CHECK(selected.exclusions().age_range == 0);
}

TEST_CASE("selection removes rows at each step in order") {
  std::vector<ObservationRow> rows;
  std::int64_t next_person = 1;

  // Step 1: ten rows outside the age range. Seven open their spell (no
  // surviving predecessor), three sit mid-spell and orphan the row before
  // them, which step 3 then removes.
  for (int i = 0; i < 7; ++i) {
    std::int64_t p = next_person++;
    auto bad = make_row(p, 2006);
    bad.age = 17;
    rows.push_back(bad);
    rows.push_back(make_row(p, 2007));
    rows.push_back(make_row(p, 2008));
  }
  for (int i = 0; i < 3; ++i) {
    std::int64_t p = next_person++;
    rows.push_back(make_row(p, 2006));
    auto bad = make_row(p, 2007);
    bad.age = 17;
    rows.push_back(bad);
    rows.push_back(make_row(p, 2008));
    rows.push_back(make_row(p, 2009));
  }
  // Step 2: five spell-opening rows with missing status.
  for (int i = 0; i < 5; ++i) {
    std::int64_t p = next_person++;
    rows.push_back(make_row(p, 2006, std::nullopt));
    rows.push_back(make_row(p, 2007));
    rows.push_back(make_row(p, 2008));
  }
  // Step 4: two rows with a missing covariate at the spell end.
  for (int i = 0; i < 2; ++i) {
    std::int64_t p = next_person++;
    rows.push_back(make_row(p, 2006));
    rows.push_back(make_row(p, 2007));
    rows.push_back(make_row(p, 2008));
    auto bad = make_row(p, 2010);
    bad.school_years.reset();
    rows.push_back(bad);
  }
  // Step 5: one person left with a single row.
  rows.push_back(make_row(next_person++, 2006));

  auto selected = apply_selection_rules(PanelDataset::from_rows(rows));
  auto log = selected.exclusions();
  CHECK(log.age_range == 10);
  CHECK(log.missing_state == 5);
  CHECK(log.missing_next_state == 3);
  CHECK(log.missing_covariates == 2);
  CHECK(log.single_observation == 1);
}

TEST_CASE("every person in a selected dataset has at least two rows") {
  std::vector<ObservationRow> rows;
  for (std::int64_t p = 1; p <= 20; ++p)
    for (int w = 0; w < 1 + static_cast<int>(p % 4); ++w)
      rows.push_back(make_row(p, 2006 + w));
  auto selected = apply_selection_rules(PanelDataset::from_rows(rows));
  for (std::size_t s = 0; s < selected.person_count(); ++s)
    CHECK(selected.person(s).size() >= 2);
}

namespace {

ModelSpec small_spec() {
  ModelSpec spec;
  spec.current = {"cma_index", "school_years"};
  spec.constant = {"female"};
  spec.time_means = {"school_years"};
  spec.initial_values = {"school_years"};
  spec.interaction_vars = {"cma_index"};
  spec.year_dummies = false;
  spec.entry_wave_dummies = false;
  return spec;
}

}  // namespace

TEST_CASE("transition records per person equal waves minus one") {
  std::vector<ObservationRow> rows;
  for (std::int64_t p = 1; p <= 5; ++p)
    for (int w = 0; w < 2 + static_cast<int>(p % 3); ++w) {
      auto r = make_row(p, 2006 + w,
                        w % 2 ? LaborState::Informal : LaborState::Formal);
      r.school_years = 10 + static_cast<double>(w) + static_cast<double>(p);
      rows.push_back(r);
    }
  auto ds = apply_selection_rules(PanelDataset::from_rows(rows));
  auto dm = build_design(ds, small_spec());
  CHECK(dm.n_persons() == 5);
  for (std::size_t p = 0; p < dm.n_persons(); ++p) {
    std::size_t records = dm.person_first[p + 1] - dm.person_first[p];
    CHECK(records == ds.person(p).size() - 1);
  }

  // Time means over waves 2..T recomputed independently.
  int mean_col = dm.column_index("mean[school_years]");
  REQUIRE(mean_col >= 0);
  for (std::size_t p = 0; p < dm.n_persons(); ++p) {
    auto span = ds.person(p);
    double acc = 0.0;
    for (std::size_t k = 1; k < span.size(); ++k) acc += *span[k].school_years;
    double expected = acc / static_cast<double>(span.size() - 1);
    for (std::size_t r = dm.person_first[p]; r < dm.person_first[p + 1]; ++r) {
      double rel = std::abs(dm.x(static_cast<long>(r), mean_col) - expected) /
                   std::max(1.0, std::abs(expected));
      CHECK(rel < 1e-12);
    }
  }
}

TEST_CASE("design for waves {1,2,3} averages waves 2 and 3") {
  std::vector<ObservationRow> rows;
  for (int w = 0; w < 3; ++w) {
    auto r = make_row(1, 2006 + w);
    r.school_years = 10.0 + w;  // 10, 11, 12
    rows.push_back(r);
  }
  auto dm = build_design(PanelDataset::from_rows(rows), small_spec());
  CHECK(dm.n_records() == 2);
  int mean_col = dm.column_index("mean[school_years]");
  int init_col = dm.column_index("init[school_years]");
  CHECK(dm.x(0, mean_col) == doctest::Approx(11.5));
  CHECK(dm.x(0, init_col) == doctest::Approx(10.0));

  // A constant covariate has mean equal to itself.
  for (auto& r : rows) r.school_years = 9.0;
  auto dm2 = build_design(PanelDataset::from_rows(rows), small_spec());
  CHECK(dm2.x(0, dm2.column_index("mean[school_years]")) == doctest::Approx(9.0));
  CHECK(dm2.x(0, dm2.column_index("init[school_years]")) == doctest::Approx(9.0));
}

TEST_CASE("zero index zeroes every interaction column") {
  std::vector<ObservationRow> rows;
  for (int w = 0; w < 4; ++w) {
    auto r = make_row(2, 2006 + w,
                      w % 2 ? LaborState::NoJob : LaborState::Informal);
    r.cma_index = 0.0;
    rows.push_back(r);
  }
  auto dm = build_design(PanelDataset::from_rows(rows), small_spec());
  for (std::size_t c = 0; c < dm.columns.size(); ++c) {
    if (dm.columns[c].block != ColumnBlock::Interaction) continue;
    CHECK(dm.x.col(static_cast<long>(c)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("interaction columns equal the product of their parents") {
  std::vector<ObservationRow> rows;
  for (std::int64_t p = 1; p <= 4; ++p)
    for (int w = 0; w < 3; ++w) {
      auto r = make_row(p, 2006 + w,
                        (p + w) % 3 == 0 ? LaborState::Formal
                        : (p + w) % 3 == 1 ? LaborState::Informal
                                           : LaborState::NoJob);
      r.cma_index = 0.3 * static_cast<double>(p) - 0.2 * w;
      rows.push_back(r);
    }
  auto dm = build_design(PanelDataset::from_rows(rows), small_spec());
  for (std::size_t c = 0; c < dm.columns.size(); ++c) {
    const auto& col = dm.columns[c];
    if (col.block != ColumnBlock::Interaction) continue;
    for (long r = 0; r < dm.x.rows(); ++r)
      CHECK(dm.x(r, static_cast<long>(c)) ==
            dm.x(r, col.lag_parent) * dm.x(r, col.var_parent));
  }
}

TEST_CASE("identical inputs give identical manifests") {
  std::vector<ObservationRow> rows;
  for (int w = 0; w < 3; ++w) rows.push_back(make_row(1, 2006 + w));
  auto ds = PanelDataset::from_rows(rows);
  auto a = build_design(ds, small_spec());
  auto b = build_design(ds, small_spec());
  CHECK(a.manifest() == b.manifest());
  CHECK(a.x == b.x);
}

TEST_CASE("household head selection implements the three rules") {
  std::vector<ObservationRow> rows;
  auto add_person = [&](std::int64_t id, double age, double female, double cons) {
    auto r = make_row(id, 2006);
    r.age = age;
    r.female = female;
    r.log_consumption = cons;
    rows.push_back(r);
    rows.push_back(make_row(id, 2007));
  };
  add_person(1, 40, 0, 3.0);
  add_person(2, 55, 1, 4.0);
  add_person(3, 30, 0, 5.0);
  std::map<std::int64_t, std::int64_t> hh = {{1, 100}, {2, 100}, {3, 100}};
  auto ds = PanelDataset::from_rows(rows);

  auto oldest_male = restrict_to_household_heads(ds, hh, HeadRule::OldestMale, 1);
  CHECK(oldest_male.person_count() == 1);
  CHECK(oldest_male.person_id(0) == 1);

  auto earner = restrict_to_household_heads(ds, hh, HeadRule::HighestEarner, 1);
  CHECK(earner.person_id(0) == 3);

  auto random_pick = restrict_to_household_heads(ds, hh, HeadRule::Random, 1);
  CHECK(random_pick.person_count() == 1);
  auto random_again = restrict_to_household_heads(ds, hh, HeadRule::Random, 1);
  CHECK(random_pick.person_id(0) == random_again.person_id(0));

  // All-female household falls back to the oldest female.
  std::map<std::int64_t, std::int64_t> hh2 = {{2, 200}};
  auto fallback = restrict_to_household_heads(ds, hh2, HeadRule::OldestMale, 1);
  bool found = false;
  for (std::size_t s = 0; s < fallback.person_count(); ++s)
    if (fallback.person_id(s) == 2) found = true;
  CHECK(found);
}
