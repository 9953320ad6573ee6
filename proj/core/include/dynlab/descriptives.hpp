#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dynlab/panel.hpp"

namespace dynlab {

class InsufficientEventsError : public DataError {
 public:
  using DataError::DataError;
};

// Annual transition frequencies between labor states, one matrix per split
// group. Rows with no origin observations are marked absent rather than
// reported as 0/0.
struct TransitionMatrix {
  std::string group;
  std::vector<std::string> origins;
  std::vector<std::string> destinations;
  Eigen::MatrixXd prob;
  Eigen::MatrixXi counts;
  std::vector<bool> origin_present;
  long n_transitions = 0;
};

// Classifies a transition into a split cell; nullopt drops the pair.
using TransitionSplitter = std::function<std::optional<std::string>(
    const ObservationRow& origin, const ObservationRow& destination)>;

std::vector<TransitionMatrix> transition_matrix(const PanelDataset& ds,
                                                const TransitionSplitter& split = nullptr,
                                                bool disaggregate_informal = false);

// Splitter for the borrower/non-borrower comparison: a household is a
// borrower over (t, t+1] when the destination interview reports a loan.
TransitionSplitter borrower_splitter();

struct SummaryCell {
  double mean = 0.0;
  std::optional<double> sd;  // suppressed for binary variables
  long n = 0;
};

struct SummaryRow {
  std::string variable;
  std::vector<SummaryCell> by_state;            // indexed like states below
  std::vector<std::optional<double>> welch_t;   // vs the first state; null for it
};

struct SummaryTable {
  std::vector<std::string> states;  // first entry is the comparison base
  std::vector<SummaryRow> rows;
};

SummaryTable summary_stats(const PanelDataset& ds,
                           const std::vector<std::string>& variables);

struct EventStudyPoint {
  int k = 0;          // years relative to the first observed loan
  double coef = 0.0;  // relative-year coefficient (0 at k = 0 by construction)
  double se = 0.0;
  double plotted = 0.0;  // coef + average fitted outcome at k = 0
};

struct EventStudyResult {
  std::string outcome;
  std::vector<EventStudyPoint> points;
  double base_level = 0.0;
  long n_obs = 0;
  long n_persons = 0;
};

struct EventStudy {
  EventStudyResult entry_rate;   // incidence of informal-to-formal entries
  EventStudyResult switching;    // formal next year, among informal origins
};

// Linear probability regressions on relative-year dummies (k = 0 omitted),
// a quartic in age and calendar-year dummies, estimated over persons with an
// observed first loan. Persons whose first interview already reports a loan
// contribute post-event points only.
EventStudy event_study(const PanelDataset& ds, int window);

// Least squares via column-pivoted QR; returns coefficients and classical
// standard errors. Exposed for reuse and testing.
struct OlsFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  Eigen::VectorXd fitted;
  double sigma2 = 0.0;
};
OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

}  // namespace dynlab
