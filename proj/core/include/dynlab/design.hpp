#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "dynlab/model_spec.hpp"
#include "dynlab/panel.hpp"

namespace dynlab {

class EmptyAfterSelectionError : public DataError {
 public:
  using DataError::DataError;
};

enum class ColumnBlock {
  Intercept,
  LagState,
  Current,
  Interaction,
  Constant,
  TimeMean,
  InitialValue,
  InitialState,
  Year,
  EntryWave,
  Instrument
};

std::string to_string(ColumnBlock b);

struct ColumnInfo {
  std::string name;
  ColumnBlock block;
  // For interaction columns: indices of the parent columns (lag dummy and
  // covariate) inside the same matrix; -1 otherwise.
  int lag_parent = -1;
  int var_parent = -1;
};

// One record per consecutive wave pair within a person. Records of a person
// are contiguous and persons appear in dataset order, so likelihood code can
// walk person spans directly. Immutable after construction.
struct DesignMatrix {
  Eigen::MatrixXd x;                  // records x columns (transition equation)
  std::vector<int> outcome;           // destination outcome index per record
  std::vector<int> lag_state;         // origin lag-category index per record
  std::vector<ColumnInfo> columns;

  std::vector<std::int64_t> cluster;       // cluster id per record (person id)
  std::vector<std::size_t> person_first;   // person -> first record; sentinel at end
  std::vector<std::int64_t> person_ids;

  // First-period equation (one row per person); empty unless requested.
  Eigen::MatrixXd x_init;
  std::vector<int> outcome_init;
  std::vector<ColumnInfo> columns_init;

  std::vector<std::string> outcome_labels;
  std::vector<std::string> lag_labels;  // full list; index 0 is the omitted category

  std::size_t n_records() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t n_persons() const { return person_ids.size(); }

  int column_index(const std::string& name) const;  // -1 when absent

  Eigen::VectorXd column_means() const;
  Eigen::VectorXd origin_frequencies() const;  // over lag categories

  // Deterministic description of outcome coding and column layout; equal
  // inputs produce byte-identical manifests.
  std::string manifest() const;
};

DesignMatrix build_design(const PanelDataset& ds, const ModelSpec& spec);

// Loan-incidence design: records are transitions whose origin reports no
// loan intention; the outcome is the destination row's loan indicator
// (or a caller-supplied 3-way loan type for the multinomial variant).
// Covariates and the lagged employment state come from the origin row.
DesignMatrix build_loan_design(const PanelDataset& ds, const ModelSpec& spec);

// Evaluation-point helper shared by the post-estimation code: sets the lag
// dummies for `origin` and recomputes interaction columns as the product of
// their parents. `base` must be a full design row (lag and interaction
// entries are overwritten).
Eigen::VectorXd design_row_for_origin(const std::vector<ColumnInfo>& columns,
                                      Eigen::VectorXd base, int origin);

}  // namespace dynlab
