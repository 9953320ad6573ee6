#pragma once

#include <array>

namespace dynlab::theory {

// How the non-interest cost of borrowing enters the repayment: either as a
// fixed amount repaid with interest, or folded into the interest rate.
enum class CostForm { Fixed, InterestMarkup };

struct HouseholdParams {
  double income_now = 100.0;   // y_t > 0
  double growth = 0.0;         // g, expected income growth rate
  double interest = 0.0;       // r >= 0
  double fixed_cost = 0.0;     // kappa >= 0, borrowers only
  double verify_share = 1.0;   // theta in [0, 1]
  double limit_slope = 1.0;    // pi > 0
  double discount = 1.0;       // beta in (0, 1]
  double bliss = 0.0;          // c-check for quadratic utility; <= 0 means "pick automatically"

  void validate() const;  // throws std::invalid_argument on a broken invariant
};

struct ConsumptionPath {
  double now;
  double next;
};

// Two-period budget identity. Savers (borrow <= 0) pay no fixed cost.
ConsumptionPath consumption_path(const HouseholdParams& p, double borrow,
                                 CostForm form = CostForm::Fixed);

// Unconstrained optimum of the quadratic-utility problem under
// discount * (1 + r) = 1.
double desired_borrowing(const HouseholdParams& p, CostForm form = CostForm::Fixed);

// Largest loan a lender extends against verifiable income.
double credit_limit(const HouseholdParams& p);

// Verifiable-income share at which the desired loan exactly meets the limit.
// May be <= 0 (constraint slack for any theta) or > 1 (loan unattainable).
double min_verifiable_share(const HouseholdParams& p);

// Quadratic utility of a borrowing choice, using the bliss level from the
// parameters (or an automatic safe default when bliss <= 0).
double lifetime_utility(const HouseholdParams& p, double borrow,
                        CostForm form = CostForm::Fixed);

struct SignReport {
  double d_borrow_d_growth;
  double d_borrow_d_income;
  double d_borrow_d_interest;
  double d_borrow_d_cost;
  double d_share_d_cost;
  double d_share_d_interest;
  double d2_share_d_cost_d_interest;
  double d2_share_d_cost_d_income;

  std::array<double, 8> values() const;
  std::array<int, 8> signs() const;  // -1 / 0 / +1 per derivative
};

// Analytic partial derivatives of desired borrowing and of the minimum
// verifiable share. Requires an interior point: g*y != kappa*(1+r).
SignReport comparative_statics(const HouseholdParams& p);

}  // namespace dynlab::theory
