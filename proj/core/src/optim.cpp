#include "dynlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace dynlab {

namespace {

// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb); falls
// back to bisection when the interpolation is ill-conditioned.
double cubic_minimizer(double a, double fa, double ga, double b, double fb, double gb) {
  if (a == b) return a;
  double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  double disc = d1 * d1 - ga * gb;
  if (disc < 0.0 || !std::isfinite(disc)) return 0.5 * (a + b);
  double d2 = std::sqrt(disc);
  if (b < a) d2 = -d2;
  double denom = gb - ga + 2.0 * d2;
  if (denom == 0.0) return 0.5 * (a + b);
  double t = b - (b - a) * (gb + d2 - d1) / denom;
  double lo = std::min(a, b), hi = std::max(a, b);
  double margin = 0.05 * (hi - lo);
  if (!std::isfinite(t)) return 0.5 * (a + b);
  return std::clamp(t, lo + margin, hi - margin);
}

struct Probe {
  double step = 0.0;
  double value = 0.0;
  double deriv = 0.0;
};

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, Eigen::VectorXd x0,
                           const LbfgsOptions& opt) {
  const int n = static_cast<int>(x0.size());
  LbfgsResult out;
  out.x = std::move(x0);

  Eigen::VectorXd grad(n), grad_new(n), x_new(n), direction(n);
  int evals = 0;
  double f = fg(out.x, grad);
  ++evals;
  if (!std::isfinite(f)) throw std::runtime_error("lbfgs: objective not finite at start");

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  auto grad_inf = [](const Eigen::VectorXd& g) { return g.lpNorm<Eigen::Infinity>(); };

  out.gradient_norm = grad_inf(grad);
  out.value = f;
  if (out.gradient_norm <= opt.gradient_tolerance) {
    out.converged = true;
    out.message = "converged at start";
    out.evaluations = evals;
    return out;
  }

  for (int iter = 1; iter <= opt.max_iterations; ++iter) {
    // Two-loop recursion.
    direction = -grad;
    const int m = static_cast<int>(s_hist.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(direction);
      direction -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      double gamma = s_hist[m - 1].dot(y_hist[m - 1]) / y_hist[m - 1].squaredNorm();
      direction *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      double beta = rho_hist[i] * y_hist[i].dot(direction);
      direction += (alpha[i] - beta) * s_hist[i];
    }

    double dg0 = grad.dot(direction);
    if (dg0 >= 0.0) {  // not a descent direction: restart from steepest descent
      direction = -grad;
      dg0 = grad.dot(direction);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    const double f0 = f;
    auto try_step = [&](double step, Probe& probe) {
      x_new = out.x + step * direction;
      probe.step = step;
      probe.value = fg(x_new, grad_new);
      ++evals;
      probe.deriv = grad_new.dot(direction);
    };
    auto armijo_ok = [&](const Probe& p) {
      return std::isfinite(p.value) && p.value <= f0 + opt.wolfe_c1 * p.step * dg0;
    };
    auto wolfe_ok = [&](const Probe& p) {
      return std::abs(p.deriv) <= -opt.wolfe_c2 * dg0;
    };

    Probe best{0.0, f0, dg0};  // best Armijo point found so far
    bool have_best = false;
    bool accepted = false;

    Probe lo{0.0, f0, dg0}, hi{}, cur{};
    bool bracketed = false;

    // First probe moves no coordinate by more than one unit.
    double step =
        (iter == 1)
            ? std::min(1.0, 1.0 / std::max(1e-12, direction.lpNorm<Eigen::Infinity>()))
            : 1.0;
    Probe prev{0.0, f0, dg0};
    int ls = 0;

    // Phase 1: expand until the minimum is bracketed or Wolfe holds.
    for (; ls < opt.max_line_search; ++ls) {
      try_step(step, cur);
      if (!armijo_ok(cur) || (ls > 0 && cur.value >= prev.value)) {
        lo = prev;
        hi = cur;
        bracketed = true;
        break;
      }
      best = cur;
      have_best = true;
      if (wolfe_ok(cur)) {
        accepted = true;
        break;
      }
      if (cur.deriv >= 0.0) {
        lo = cur;
        hi = prev;
        bracketed = true;
        break;
      }
      prev = cur;
      step *= 2.0;
      if (step > 1e10) break;
    }

    // Phase 2: shrink the bracket with cubic steps.
    if (!accepted && bracketed) {
      for (; ls < opt.max_line_search; ++ls) {
        if (std::abs(hi.step - lo.step) <=
            opt.min_step * std::max(1.0, std::abs(lo.step)))
          break;
        double trial = cubic_minimizer(lo.step, lo.value, lo.deriv, hi.step, hi.value,
                                       hi.deriv);
        try_step(trial, cur);
        if (!armijo_ok(cur) || cur.value >= lo.value) {
          hi = cur;
        } else {
          best = cur;
          have_best = true;
          if (wolfe_ok(cur)) {
            accepted = true;
            break;
          }
          if (cur.deriv * (hi.step - lo.step) >= 0.0) hi = lo;
          lo = cur;
        }
      }
    }

    if (!accepted) {
      if (!have_best || best.step == 0.0) {
        out.value = f;
        out.gradient_norm = grad_inf(grad);
        out.iterations = iter - 1;
        out.evaluations = evals;
        out.converged = out.gradient_norm <= opt.gradient_tolerance;
        out.message = "line search failed";
        return out;
      }
      // Re-evaluate the best Armijo point (grad_new must match it).
      if (cur.step != best.step) try_step(best.step, cur);
    }

    Eigen::VectorXd s = x_new - out.x;
    Eigen::VectorXd y = grad_new - grad;
    double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    out.x = x_new;
    f = cur.value;
    grad = grad_new;
    out.iterations = iter;
    out.gradient_norm = grad_inf(grad);
    if (out.gradient_norm <= opt.gradient_tolerance) {
      out.converged = true;
      out.message = "gradient tolerance reached";
      break;
    }
  }

  out.value = f;
  out.evaluations = evals;
  if (!out.converged && out.message.empty()) out.message = "iteration limit reached";
  return out;
}

}  // namespace dynlab
