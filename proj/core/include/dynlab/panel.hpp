#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynlab {

enum class LaborState { Formal, Informal, NoJob };

enum class InformalSubtype {
  UnregisteredEmployee,
  SelfEmployed,
  PrivatePerson,
  Iea,
  Unknown
};

// Share of earnings received officially; NoJob mirrors the outcome coding
// used when the pay-type recode replaces the registration-based status.
enum class PayType { OfficialOnly, PartlyUnofficial, UnofficialOnly, NoJob };

std::string to_string(LaborState s);
std::string to_string(InformalSubtype s);
std::string to_string(PayType s);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MissingColumnError : public DataError {
 public:
  using DataError::DataError;
};
class RowTypeError : public DataError {
 public:
  RowTypeError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};
class DuplicateKeyError : public DataError {
 public:
  using DataError::DataError;
};

// One person-wave record. Optional fields encode item non-response; the
// selection rules decide what survives into estimation.
struct ObservationRow {
  std::int64_t person_id = 0;
  int wave_year = 0;

  std::optional<LaborState> state;
  std::optional<InformalSubtype> informal_subtype;
  std::optional<PayType> pay_type;

  // Time-varying covariates, measured at this wave.
  std::optional<double> age;
  std::optional<double> school_years;
  std::optional<double> married;
  std::optional<double> hh_size;
  std::optional<double> kids;
  std::optional<double> log_consumption;
  std::optional<double> interval_days;

  // Time-constant covariates.
  std::optional<double> female;
  std::optional<double> russian;
  std::optional<long long> parent_educ;  // 1..4, base 1
  std::optional<double> pop_log;
  std::optional<double> urban;
  std::optional<long long> district;

  // Credit-market variables.
  std::optional<double> cma_index;
  std::optional<long long> bank_presence;  // 1 none, 2 Sberbank only, 3 other banks
  std::optional<double> dist_sber_km;
  std::optional<double> dist_other_km;
  std::optional<double> offices_per_1000;
  std::optional<long long> loan_taken;   // loan taken during (previous wave, this wave]
  std::optional<long long> loan_intent;  // plans a loan in the next 12 months

  // First-wave instruments.
  std::optional<double> rel_earn_17;
  std::optional<double> govt_share;
  std::optional<double> informal_share;
  std::optional<long long> soe_closed;
};

// Numeric view of a row field by schema name (categorical fields are
// returned as their numeric codes). Throws DataError for unknown names.
std::optional<double> field_value(const ObservationRow& row, const std::string& name);

// Names of the numeric schema fields accepted by field_value.
const std::vector<std::string>& numeric_field_names();

struct ExclusionLog {
  long age_range = 0;
  long missing_state = 0;        // employment status missing at the wave itself
  long missing_next_state = 0;   // next interview exists but its status was dropped
  long missing_covariates = 0;
  long single_observation = 0;

  std::array<long, 5> as_array() const {
    return {age_range, missing_state, missing_next_state, missing_covariates,
            single_observation};
  }
};

// Unbalanced person-by-wave panel. Rows are sorted by (person_id, wave_year)
// and grouped contiguously by person. Immutable after construction.
class PanelDataset {
 public:
  PanelDataset() = default;

  // Sorts, groups and checks invariants (strictly increasing waves within
  // person, subtype only on informal rows, no pay type on IEA rows).
  static PanelDataset from_rows(std::vector<ObservationRow> rows);

  const std::vector<ObservationRow>& rows() const { return rows_; }
  std::size_t person_count() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::span<const ObservationRow> person(std::size_t slot) const;
  std::int64_t person_id(std::size_t slot) const { return rows_[offsets_[slot]].person_id; }

  const ExclusionLog& exclusions() const { return exclusions_; }

  friend PanelDataset apply_selection_rules(const PanelDataset&, double, double,
                                            std::span<const std::string>);

 private:
  std::vector<ObservationRow> rows_;
  std::vector<std::size_t> offsets_;  // person slot -> first row index; sentinel at end
  ExclusionLog exclusions_;

  void rebuild_offsets();
};

// Panel CSV schema, in column order.
const std::vector<std::string>& panel_csv_columns();

PanelDataset load_panel(std::istream& in);
PanelDataset load_panel_file(const std::string& path);
void write_panel(std::ostream& out, const PanelDataset& ds);
void write_panel_file(const std::string& path, const PanelDataset& ds);

// Covariates that must be present for a row to survive selection step 4.
const std::vector<std::string>& default_required_covariates();

// Sequential selection: (1) age range, (2) own employment status present,
// (3) status of the next interview present, (4) covariates present,
// (5) at least two remaining observations per person. The exclusion log of
// the returned dataset records rows removed at each step, in order.
//
// Step 3 drops a row when the person's next raw interview exists but was
// removed at steps 1-2: the transition out of that row has an unknown
// destination and is not bridged. Waves absent from the data entirely do
// bridge (the interval covariate carries the elapsed time).
PanelDataset apply_selection_rules(
    const PanelDataset& ds, double age_lo = 20.0, double age_hi = 59.0,
    std::span<const std::string> required_covariates = default_required_covariates());

// Prime loan applicant per household for the loan equations. Households are
// given by an explicit person-to-household map; unmapped persons form
// singleton households. Member attributes are read from each person's first
// row; log consumption stands in for earnings.
enum class HeadRule { Random, OldestMale, HighestEarner };

PanelDataset restrict_to_household_heads(
    const PanelDataset& ds,
    const std::map<std::int64_t, std::int64_t>& household_of_person, HeadRule rule,
    std::uint64_t seed);

}  // namespace dynlab
