#include "dynlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dynlab::theory {

void HouseholdParams::validate() const {
  if (!(income_now > 0.0)) throw std::invalid_argument("income_now must be positive");
  if (!(interest >= 0.0)) throw std::invalid_argument("interest must be nonnegative");
  if (!(fixed_cost >= 0.0)) throw std::invalid_argument("fixed_cost must be nonnegative");
  if (!(verify_share >= 0.0 && verify_share <= 1.0))
    throw std::invalid_argument("verify_share must lie in [0, 1]");
  if (!(limit_slope > 0.0)) throw std::invalid_argument("limit_slope must be positive");
  if (!(discount > 0.0 && discount <= 1.0))
    throw std::invalid_argument("discount must lie in (0, 1]");
}

ConsumptionPath consumption_path(const HouseholdParams& p, double borrow, CostForm form) {
  p.validate();
  const double income_next = (1.0 + p.growth) * p.income_now;
  double repay;
  if (borrow > 0.0) {
    repay = form == CostForm::Fixed
                ? (borrow + p.fixed_cost) * (1.0 + p.interest)
                : borrow * (1.0 + p.interest + p.fixed_cost);
  } else {
    repay = borrow * (1.0 + p.interest);  // saver: earns interest, no cost
  }
  return {p.income_now + borrow, income_next - repay};
}

double desired_borrowing(const HouseholdParams& p, CostForm form) {
  p.validate();
  if (form == CostForm::Fixed)
    return (p.growth * p.income_now - p.fixed_cost * (1.0 + p.interest)) / (2.0 + p.interest);
  return p.growth * p.income_now / (2.0 + p.interest + p.fixed_cost);
}

double credit_limit(const HouseholdParams& p) {
  p.validate();
  return p.limit_slope * p.verify_share * p.income_now;
}

double min_verifiable_share(const HouseholdParams& p) {
  p.validate();
  return (p.growth * p.income_now - p.fixed_cost * (1.0 + p.interest)) /
         ((2.0 + p.interest) * p.limit_slope * p.income_now);
}

double lifetime_utility(const HouseholdParams& p, double borrow, CostForm form) {
  auto path = consumption_path(p, borrow, form);
  double bliss = p.bliss;
  if (bliss <= 0.0)
    bliss = 10.0 * std::max(p.income_now, (1.0 + p.growth) * p.income_now);
  auto u = [bliss](double c) { return -0.5 * (bliss - c) * (bliss - c); };
  return u(path.now) + p.discount * u(path.next);
}

std::array<double, 8> SignReport::values() const {
  return {d_borrow_d_growth,  d_borrow_d_income,        d_borrow_d_interest,
          d_borrow_d_cost,    d_share_d_cost,           d_share_d_interest,
          d2_share_d_cost_d_interest, d2_share_d_cost_d_income};
}

std::array<int, 8> SignReport::signs() const {
  std::array<int, 8> s{};
  auto v = values();
  for (std::size_t i = 0; i < v.size(); ++i) s[i] = (v[i] > 0.0) - (v[i] < 0.0);
  return s;
}

SignReport comparative_statics(const HouseholdParams& p) {
  p.validate();
  const double y = p.income_now;
  const double g = p.growth;
  const double r = p.interest;
  const double k = p.fixed_cost;
  const double pi = p.limit_slope;
  if (g * y - k * (1.0 + r) == 0.0)
    throw std::invalid_argument("comparative_statics: boundary point g*y == kappa*(1+r)");

  const double two_r = 2.0 + r;
  SignReport rep;
  rep.d_borrow_d_growth = y / two_r;
  rep.d_borrow_d_income = g / two_r;
  rep.d_borrow_d_interest = -(k + g * y) / (two_r * two_r);
  rep.d_borrow_d_cost = -(1.0 + r) / two_r;
  rep.d_share_d_cost = -(1.0 + r) / (two_r * pi * y);
  rep.d_share_d_interest = -(g * y + k) / (two_r * two_r * pi * y);
  rep.d2_share_d_cost_d_interest = -1.0 / (two_r * two_r * pi * y);
  rep.d2_share_d_cost_d_income = (1.0 + r) / (two_r * pi * y * y);
  return rep;
}

}  // namespace dynlab::theory
