#include "dynlab/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>
#include <atomic>
#include <limits>
#include <mutex>
#include <cmath>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dynlab/optim.hpp"
#include "dynlab/quadrature.hpp"

namespace dynlab {

namespace {
using Json = nlohmann::ordered_json;
}

ParameterLayout make_layout(const ModelSpec& spec, const DesignMatrix& design) {
  ParameterLayout layout;
  layout.n_outcomes = static_cast<int>(design.outcome_labels.size());
  layout.base = spec.base_index();
  layout.n_cols = static_cast<int>(design.columns.size());
  layout.heckman = spec.initial_conditions == InitialConditionsMode::Heckman &&
                   design.columns_init.size() > 0;
  layout.n_init_cols = layout.heckman ? static_cast<int>(design.columns_init.size()) : 0;
  layout.n_effects =
      spec.heterogeneity == HeterogeneityMode::RandomEffects ? layout.n_outcomes - 1 : 0;
  return layout;
}

Eigen::MatrixXd ParameterVector::cholesky() const {
  const int d = layout.n_effects;
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b <= a; ++b) chol(a, b) = values[layout.chol_index(a, b)];
  return chol;
}

Eigen::MatrixXd ParameterVector::sigma_eta() const {
  Eigen::MatrixXd chol = cholesky();
  return chol * chol.transpose();
}

ParameterVector zero_parameters(const ModelSpec& spec, const DesignMatrix& design) {
  ParameterLayout layout = make_layout(spec, design);
  return {layout, Eigen::VectorXd::Zero(layout.size())};
}

std::vector<std::string> parameter_names(const ParameterLayout& layout,
                                         const DesignMatrix& design) {
  std::vector<std::string> names(layout.size());
  for (int s = 0; s < layout.n_nonbase(); ++s) {
    const std::string& out = design.outcome_labels[layout.outcome_of_slot(s)];
    for (int c = 0; c < layout.n_cols; ++c)
      names[layout.coef_index(s, c)] = out + ":" + design.columns[c].name;
    if (layout.heckman) {
      for (int c = 0; c < layout.n_init_cols; ++c)
        names[layout.heckman_coef_index(s, c)] =
            out + ":init_eq[" + design.columns_init[c].name + "]";
      names[layout.rho_index(s)] = out + ":rho";
    }
  }
  for (int a = 0; a < layout.n_effects; ++a)
    for (int b = 0; b <= a; ++b)
      names[layout.chol_index(a, b)] =
          "chol[" + std::to_string(a) + "," + std::to_string(b) + "]";
  return names;
}

namespace {

struct NodeSet {
  Eigen::MatrixXd z;     // K x d standardized nodes (empty in support mode)
  Eigen::MatrixXd eta;   // K x d effect values (support mode only)
  Eigen::VectorXd logw;  // K
  bool is_support = false;
  int count() const { return static_cast<int>(logw.size()); }
};

NodeSet gauss_hermite_nodes(int nodes_per_dim, int dim) {
  NodeSet ns;
  if (dim == 0) {
    ns.z.resize(1, 0);
    ns.logw = Eigen::VectorXd::Zero(1);
    return ns;
  }
  QuadratureGrid grid = tensor_grid(gauss_hermite(nodes_per_dim), dim);
  ns.z = grid.nodes;
  ns.logw = grid.weights.array().log();
  return ns;
}

struct EvalFlags {
  bool gradient = false;
  bool person_scores = false;
};

struct EvalOutput {
  double total = 0.0;
  Eigen::VectorXd per_person;
  Eigen::VectorXd grad;
  Eigen::MatrixXd scores;  // persons x params
};

// Likelihood and score for one block of persons. Probabilities for every
// (record, node, outcome) pair are cached in scratch for the score pass.
class Engine {
 public:
  Engine(const ParameterLayout& layout, const DesignMatrix& dm, const NodeSet& nodes)
      : layout_(layout), dm_(dm), nodes_(nodes) {}

  void set_parameters(const Eigen::VectorXd& params) {
    const int nb = layout_.n_nonbase();
    theta_.resize(layout_.n_cols, nb);
    for (int s = 0; s < nb; ++s)
      for (int c = 0; c < layout_.n_cols; ++c)
        theta_(c, s) = params[layout_.coef_index(s, c)];
    if (layout_.heckman) {
      theta0_.resize(layout_.n_init_cols, nb);
      rho_.resize(nb);
      for (int s = 0; s < nb; ++s) {
        for (int c = 0; c < layout_.n_init_cols; ++c)
          theta0_(c, s) = params[layout_.heckman_coef_index(s, c)];
        rho_[s] = params[layout_.rho_index(s)];
      }
    }
    const int d = layout_.n_effects;
    if (nodes_.is_support) {
      eta_ = nodes_.eta;
    } else if (d > 0) {
      Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(d, d);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b <= a; ++b) chol(a, b) = params[layout_.chol_index(a, b)];
      eta_ = nodes_.z * chol.transpose();
    } else {
      eta_ = Eigen::MatrixXd::Zero(nodes_.count(), layout_.n_nonbase());
    }
    if (d == 0 && !nodes_.is_support)
      eta_ = Eigen::MatrixXd::Zero(nodes_.count(), layout_.n_nonbase());
  }

  // Returns log-likelihood of one person; fills score (size = layout.size())
  // when requested.
  double person(std::size_t p, const EvalFlags& flags, Eigen::VectorXd* score) {
    const int nb = layout_.n_nonbase();
    const int K = nodes_.count();
    const std::size_t first = dm_.person_first[p];
    const std::size_t last = dm_.person_first[p + 1];
    const int T = static_cast<int>(last - first);
    const bool heck = layout_.heckman;

    // Fixed parts of the linear indices.
    fixed_.resize(T, nb);
    fixed_ = dm_.x.middleRows(static_cast<long>(first), T) * theta_;
    if (heck) fixed0_ = dm_.x_init.row(static_cast<long>(p)) * theta0_;

    const int rows_per_node = T + (heck ? 1 : 0);
    probs_.resize(static_cast<std::size_t>(rows_per_node) * K * nb);
    loga_.resize(K);

    double worst_index = 0.0;
    for (int k = 0; k < K; ++k) {
      double acc = nodes_.logw[k];
      for (int t = 0; t < rows_per_node; ++t) {
        const bool init_row = t == T;
        const int y = init_row ? dm_.outcome_init[p] : dm_.outcome[first + t];
        double vmax = 0.0;
        double v[8];
        for (int s = 0; s < nb; ++s) {
          double linear = init_row ? fixed0_[s] + rho_[s] * eta_(k, s)
                                   : fixed_(t, s) + eta_(k, s);
          v[s] = linear;
          if (linear > vmax) vmax = linear;
          if (std::abs(linear) > std::abs(worst_index)) worst_index = linear;
        }
        double denom = std::exp(-vmax);  // base outcome contributes exp(0)
        for (int s = 0; s < nb; ++s) {
          double e = std::exp(v[s] - vmax);
          probs_[(static_cast<std::size_t>(t) * K + k) * nb + s] = e;  // scaled
          denom += e;
        }
        double inv = 1.0 / denom;
        for (int s = 0; s < nb; ++s)
          probs_[(static_cast<std::size_t>(t) * K + k) * nb + s] *= inv;
        int slot = layout_.nonbase_slot(y);
        double v_y = slot < 0 ? 0.0 : v[slot];
        acc += v_y - (vmax + std::log(denom));
      }
      loga_[k] = acc;
    }

    double m = loga_[0];
    for (int k = 1; k < K; ++k) m = std::max(m, loga_[k]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(loga_[k] - m);
    double loglik = m + std::log(sum);
    if (!std::isfinite(loglik))
      throw NonFiniteLikelihoodError(dm_.person_ids[p], worst_index);

    if (!flags.gradient || score == nullptr) return loglik;

    // Posterior node weights.
    qk_.resize(K);
    for (int k = 0; k < K; ++k) qk_[k] = std::exp(loga_[k] - loglik);

    score->setZero();
    const int d = layout_.n_effects;

    for (int t = 0; t < T; ++t) {
      const int y = dm_.outcome[first + t];
      const int yslot = layout_.nonbase_slot(y);
      const auto xrow = dm_.x.row(static_cast<long>(first + t));
      for (int s = 0; s < nb; ++s) {
        double a = 0.0;
        for (int k = 0; k < K; ++k)
          a += qk_[k] * ((s == yslot ? 1.0 : 0.0) -
                         probs_[(static_cast<std::size_t>(t) * K + k) * nb + s]);
        if (a != 0.0)
          for (int c = 0; c < layout_.n_cols; ++c)
            (*score)[layout_.coef_index(s, c)] += a * xrow[c];
      }
    }

    if (heck) {
      const int y0 = dm_.outcome_init[p];
      const int y0slot = layout_.nonbase_slot(y0);
      const auto x0row = dm_.x_init.row(static_cast<long>(p));
      for (int s = 0; s < nb; ++s) {
        double b = 0.0;
        double b_eta = 0.0;
        for (int k = 0; k < K; ++k) {
          double resid = (s == y0slot ? 1.0 : 0.0) -
                         probs_[(static_cast<std::size_t>(T) * K + k) * nb + s];
          b += qk_[k] * resid;
          b_eta += qk_[k] * resid * eta_(k, s);
        }
        for (int c = 0; c < layout_.n_init_cols; ++c)
          (*score)[layout_.heckman_coef_index(s, c)] += b * x0row[c];
        (*score)[layout_.rho_index(s)] += b_eta;
      }
    }

    if (d > 0 && !nodes_.is_support) {
      // d(eta_a)/d(L_ab) = z_b; initial-period rows scale by rho_a.
      for (int k = 0; k < K; ++k) {
        for (int a = 0; a < d; ++a) {
          double s_res = 0.0;
          for (int t = 0; t < T; ++t) {
            const int yslot = layout_.nonbase_slot(dm_.outcome[first + t]);
            s_res += (a == yslot ? 1.0 : 0.0) -
                     probs_[(static_cast<std::size_t>(t) * K + k) * nb + a];
          }
          if (heck) {
            const int y0slot = layout_.nonbase_slot(dm_.outcome_init[p]);
            s_res += rho_[a] * ((a == y0slot ? 1.0 : 0.0) -
                                probs_[(static_cast<std::size_t>(T) * K + k) * nb + a]);
          }
          double qs = qk_[k] * s_res;
          for (int b = 0; b <= a; ++b)
            (*score)[layout_.chol_index(a, b)] += qs * nodes_.z(k, b);
        }
      }
    }
    return loglik;
  }

 private:
  const ParameterLayout& layout_;
  const DesignMatrix& dm_;
  const NodeSet& nodes_;
  Eigen::MatrixXd theta_, theta0_, eta_;
  Eigen::VectorXd rho_;
  Eigen::RowVectorXd fixed0_;
  Eigen::MatrixXd fixed_;
  std::vector<double> probs_, loga_, qk_;
};

constexpr std::size_t kPersonBlock = 64;

EvalOutput evaluate(const ParameterLayout& layout, const DesignMatrix& dm,
                    const Eigen::VectorXd& params, const NodeSet& nodes,
                    const EvalFlags& flags, int threads) {
  if (layout.n_nonbase() > 8)
    throw std::invalid_argument("at most 9 outcomes are supported");
  const std::size_t n_persons = dm.n_persons();
  const std::size_t n_blocks = (n_persons + kPersonBlock - 1) / kPersonBlock;
  const int nparams = layout.size();

  EvalOutput out;
  out.per_person.resize(static_cast<long>(n_persons));
  if (flags.gradient) out.grad = Eigen::VectorXd::Zero(nparams);
  if (flags.person_scores)
    out.scores = Eigen::MatrixXd::Zero(static_cast<long>(n_persons), nparams);

  std::vector<double> block_total(n_blocks, 0.0);
  std::vector<Eigen::VectorXd> block_grad;
  if (flags.gradient)
    block_grad.assign(n_blocks, Eigen::VectorXd::Zero(nparams));

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto work = [&]() {
    Engine engine(layout, dm, nodes);
    engine.set_parameters(params);
    Eigen::VectorXd score(nparams);
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) break;
      try {
        const std::size_t lo = b * kPersonBlock;
        const std::size_t hi = std::min(lo + kPersonBlock, n_persons);
        for (std::size_t p = lo; p < hi; ++p) {
          double ll =
              engine.person(p, flags, flags.gradient ? &score : nullptr);
          out.per_person[static_cast<long>(p)] = ll;
          block_total[b] += ll;
          if (flags.gradient) block_grad[b] += score;
          if (flags.person_scores) out.scores.row(static_cast<long>(p)) = score;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        break;
      }
    }
  };

  int nthreads = std::max(1, threads);
  if (nthreads == 1 || n_blocks <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  // Deterministic block-ordered reduction.
  for (std::size_t b = 0; b < n_blocks; ++b) {
    out.total += block_total[b];
    if (flags.gradient) out.grad += block_grad[b];
  }
  return out;
}

NodeSet nodes_for(const ModelSpec& spec, const ParameterLayout& layout,
                  std::optional<int> override_nodes = std::nullopt) {
  if (layout.n_effects == 0) return gauss_hermite_nodes(1, 0);
  return gauss_hermite_nodes(override_nodes.value_or(spec.quadrature_nodes),
                             layout.n_effects);
}

void check_params(const ParameterLayout& layout, const ParameterVector& params) {
  if (params.values.size() != layout.size())
    throw std::invalid_argument("parameter vector does not match the model layout");
}

}  // namespace

LikelihoodResult log_likelihood(const ModelSpec& spec, const ParameterVector& params,
                                const DesignMatrix& design, int threads) {
  ParameterLayout layout = make_layout(spec, design);
  check_params(layout, params);
  NodeSet nodes = nodes_for(spec, layout);
  EvalOutput out = evaluate(layout, design, params.values, nodes, {}, threads);
  return {out.total, out.per_person};
}

Eigen::VectorXd gradient(const ModelSpec& spec, const ParameterVector& params,
                         const DesignMatrix& design, int threads) {
  ParameterLayout layout = make_layout(spec, design);
  check_params(layout, params);
  NodeSet nodes = nodes_for(spec, layout);
  EvalFlags flags;
  flags.gradient = true;
  EvalOutput out = evaluate(layout, design, params.values, nodes, flags, threads);
  return out.grad;
}

LikelihoodResult log_likelihood_at_support(const ModelSpec& spec,
                                           const ParameterVector& params,
                                           const DesignMatrix& design,
                                           const std::vector<Eigen::VectorXd>& support,
                                           const Eigen::VectorXd& weights) {
  ParameterLayout layout = make_layout(spec, design);
  check_params(layout, params);
  if (support.empty() || static_cast<long>(support.size()) != weights.size())
    throw std::invalid_argument("support and weights must have matching nonzero size");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("support weights must sum to one");

  NodeSet nodes;
  nodes.is_support = true;
  const int nb = layout.n_nonbase();
  nodes.eta.resize(static_cast<long>(support.size()), nb);
  nodes.logw.resize(static_cast<long>(support.size()));
  for (std::size_t k = 0; k < support.size(); ++k) {
    if (support[k].size() != nb)
      throw std::invalid_argument("support point dimension must match effect count");
    nodes.eta.row(static_cast<long>(k)) = support[k].transpose();
    nodes.logw[static_cast<long>(k)] =
        weights[static_cast<long>(k)] > 0.0
            ? std::log(weights[static_cast<long>(k)])
            : -std::numeric_limits<double>::infinity();
  }
  EvalOutput out = evaluate(layout, design, params.values, nodes, {}, 1);
  return {out.total, out.per_person};
}

namespace {

void check_rank(const Eigen::MatrixXd& x, const std::vector<ColumnInfo>& columns,
                const char* which) {
  if (x.rows() == 0 || x.cols() == 0) return;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) {
    std::ostringstream msg;
    msg << which << " design is rank deficient (" << qr.rank() << " of " << x.cols()
        << "); dependent columns:";
    auto perm = qr.colsPermutation().indices();
    for (long i = qr.rank(); i < x.cols(); ++i)
      msg << ' ' << columns[perm[i]].name;
    throw CollinearDesignError(msg.str());
  }
}

// Column location/scale pulled out of a design so optimization runs on
// standardized regressors; the intercept absorbs the centering.
struct ColumnScaling {
  Eigen::VectorXd mu, sigma;  // per column
  int intercept = -1;         // column index, -1 when absent

  static ColumnScaling from(const Eigen::MatrixXd& x,
                            const std::vector<ColumnInfo>& columns) {
    ColumnScaling sc;
    const long p = x.cols();
    sc.mu = Eigen::VectorXd::Zero(p);
    sc.sigma = Eigen::VectorXd::Ones(p);
    for (long c = 0; c < p; ++c)
      if (columns[c].block == ColumnBlock::Intercept) sc.intercept = static_cast<int>(c);
    if (x.rows() < 2) return sc;
    for (long c = 0; c < p; ++c) {
      if (c == sc.intercept) continue;
      double mean = x.col(c).mean();
      double sd = std::sqrt((x.col(c).array() - mean).square().sum() /
                            static_cast<double>(x.rows() - 1));
      if (sd > 1e-12) {
        sc.sigma[c] = sd;
        if (sc.intercept >= 0) sc.mu[c] = mean;
      }
    }
    return sc;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x;
    for (long c = 0; c < x.cols(); ++c)
      out.col(c) = (x.col(c).array() - mu[c]) / sigma[c];
    return out;
  }

  // Coefficients on standardized columns -> coefficients on raw columns.
  void unscale_block(Eigen::VectorXd& params, const ParameterLayout& layout,
                     bool init_block) const {
    const int ncols = init_block ? layout.n_init_cols : layout.n_cols;
    for (int s = 0; s < layout.n_nonbase(); ++s) {
      double shift = 0.0;
      for (int c = 0; c < ncols; ++c) {
        int idx = init_block ? layout.heckman_coef_index(s, c) : layout.coef_index(s, c);
        if (c == intercept) continue;
        params[idx] /= sigma[c];
        shift += params[idx] * mu[c];
      }
      if (intercept >= 0) {
        int idx = init_block ? layout.heckman_coef_index(s, intercept)
                             : layout.coef_index(s, intercept);
        params[idx] -= shift;
      }
    }
  }
};

FitResult fit_impl(const ModelSpec& spec, const DesignMatrix& design,
                   const FitOptions& opts) {
  spec.validate();
  check_rank(design.x, design.columns, "transition");
  if (spec.initial_conditions == InitialConditionsMode::Heckman)
    check_rank(design.x_init, design.columns_init, "first-period");

  ParameterLayout layout = make_layout(spec, design);
  std::vector<std::string> names = parameter_names(layout, design);

  // Standardized copy of the design for the quasi-Newton stage.
  DesignMatrix scaled = design;
  ColumnScaling scale = ColumnScaling::from(design.x, design.columns);
  scaled.x = scale.apply(design.x);
  ColumnScaling scale_init;
  if (layout.heckman) {
    scale_init = ColumnScaling::from(design.x_init, design.columns_init);
    scaled.x_init = scale_init.apply(design.x_init);
  }
  auto to_raw = [&](Eigen::VectorXd params) {
    scale.unscale_block(params, layout, false);
    if (layout.heckman) scale_init.unscale_block(params, layout, true);
    return params;
  };

  auto check_separation = [&](const Eigen::VectorXd& raw, bool strict) {
    for (int i = 0; i < raw.size(); ++i) {
      double bound = strict ? opts.separation_bound : opts.separation_bound - 1e-6;
      if (std::abs(raw[i]) > bound) throw SeparationDetectedError(names[i], raw[i]);
    }
  };

  auto run_lbfgs = [&](const ParameterLayout& lo, const NodeSet& nodes,
                       Eigen::VectorXd x0, int max_iter, double tol) {
    // Coefficients past the separation bound (in the raw parameterization)
    // act as an infinite wall.
    ObjectiveFn fg = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
      if (lo.size() == layout.size()) {
        Eigen::VectorXd raw = to_raw(p);
        for (int i = 0; i < raw.size(); ++i)
          if (std::abs(raw[i]) > opts.separation_bound) {
            g = Eigen::VectorXd::Zero(p.size());
            return std::numeric_limits<double>::infinity();
          }
      }
      EvalFlags flags;
      flags.gradient = true;
      EvalOutput out = evaluate(lo, scaled, p, nodes, flags, opts.threads);
      g = -out.grad;
      return -out.total;
    };
    LbfgsOptions lopts;
    lopts.max_iterations = max_iter;
    lopts.gradient_tolerance = tol;
    return lbfgs_minimize(fg, std::move(x0), lopts);
  };

  // Starting point (standardized space).
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(layout.size());
  if (opts.start) {
    if (opts.start->size() != layout.size())
      throw std::invalid_argument("start vector does not match the model layout");
    // Callers supply raw-space starts; run the polish stage from there.
    x0 = *opts.start;
  } else {
    if (layout.n_effects > 0 && opts.pooled_warm_start) {
      ParameterLayout pooled = layout;
      pooled.n_effects = 0;
      pooled.heckman = false;
      pooled.n_init_cols = 0;
      NodeSet trivial = gauss_hermite_nodes(1, 0);
      auto warm = run_lbfgs(pooled, trivial, Eigen::VectorXd::Zero(pooled.size()),
                            opts.max_iterations, 1e-5);
      for (int s = 0; s < layout.n_nonbase(); ++s)
        for (int c = 0; c < layout.n_cols; ++c)
          x0[layout.coef_index(s, c)] = warm.x[pooled.coef_index(s, c)];
      if (layout.heckman) {
        // Pooled multinomial fit of the first-period equation.
        DesignMatrix init_dm;
        init_dm.x = scaled.x_init;
        init_dm.columns = design.columns_init;
        init_dm.outcome = design.outcome_init;
        init_dm.lag_state.assign(design.outcome_init.size(), 0);
        init_dm.outcome_labels = design.outcome_labels;
        init_dm.lag_labels = design.lag_labels;
        init_dm.person_ids = design.person_ids;
        init_dm.cluster = design.person_ids;
        init_dm.person_first.resize(design.outcome_init.size() + 1);
        for (std::size_t i = 0; i <= design.outcome_init.size(); ++i)
          init_dm.person_first[i] = i;
        ParameterLayout init_layout;
        init_layout.n_outcomes = layout.n_outcomes;
        init_layout.base = layout.base;
        init_layout.n_cols = layout.n_init_cols;
        NodeSet trivial2 = gauss_hermite_nodes(1, 0);
        ObjectiveFn fg0 = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
          EvalFlags flags;
          flags.gradient = true;
          EvalOutput out = evaluate(init_layout, init_dm, p, trivial2, flags, 1);
          g = -out.grad;
          return -out.total;
        };
        LbfgsOptions lopts;
        lopts.max_iterations = opts.max_iterations;
        lopts.gradient_tolerance = 1e-5;
        auto warm0 =
            lbfgs_minimize(fg0, Eigen::VectorXd::Zero(init_layout.size()), lopts);
        for (int s = 0; s < layout.n_nonbase(); ++s)
          for (int c = 0; c < layout.n_init_cols; ++c)
            x0[layout.heckman_coef_index(s, c)] = warm0.x[init_layout.coef_index(s, c)];
      }
    }
    for (int a = 0; a < layout.n_effects; ++a)
      x0[layout.chol_index(a, a)] = opts.initial_chol_diag;
  }

  NodeSet nodes = nodes_for(spec, layout);
  Eigen::VectorXd raw_estimates;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;

  if (opts.start) {
    raw_estimates = x0;
  } else {
    auto stage = run_lbfgs(layout, nodes, std::move(x0), opts.max_iterations,
                           opts.gradient_tolerance);
    iterations = stage.iterations;
    raw_estimates = to_raw(stage.x);
  }
  check_separation(raw_estimates, false);

  // Newton polish in the raw parameterization: guarded steps on the exact
  // score with a finite-difference Hessian until the user tolerance holds.
  auto raw_eval = [&](const Eigen::VectorXd& p, bool want_grad) {
    EvalFlags flags;
    flags.gradient = want_grad;
    return evaluate(layout, design, p, nodes, flags, opts.threads);
  };
  auto fd_hessian = [&](const Eigen::VectorXd& p) {
    const int np = layout.size();
    Eigen::MatrixXd h(np, np);
    Eigen::VectorXd work = p;
    EvalFlags gflags;
    gflags.gradient = true;
    for (int i = 0; i < np; ++i) {
      double step = 1e-5 * std::max(1.0, std::abs(p[i]));
      double saved = work[i];
      work[i] = saved + step;
      Eigen::VectorXd gp = evaluate(layout, design, work, nodes, gflags, opts.threads).grad;
      work[i] = saved - step;
      Eigen::VectorXd gm = evaluate(layout, design, work, nodes, gflags, opts.threads).grad;
      work[i] = saved;
      h.col(i) = (gp - gm) / (2.0 * step);
    }
    return Eigen::MatrixXd(0.5 * (h + h.transpose()));
  };

  Eigen::MatrixXd hessian;
  {
    EvalOutput cur = raw_eval(raw_estimates, true);
    double f = cur.total;
    gradient_norm = cur.grad.lpNorm<Eigen::Infinity>();
    for (int newton = 0; newton < 12 && gradient_norm > opts.gradient_tolerance &&
                         iterations < opts.max_iterations;
         ++newton) {
      hessian = fd_hessian(raw_estimates);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(-hessian);
      if (ldlt.info() != Eigen::Success) break;
      Eigen::VectorXd step = ldlt.solve(cur.grad);
      if (!step.allFinite()) break;
      double scale_back = 1.0;
      bool improved = false;
      for (int half = 0; half < 25; ++half) {
        Eigen::VectorXd trial = raw_estimates + scale_back * step;
        EvalOutput t = raw_eval(trial, true);
        double tnorm = t.grad.lpNorm<Eigen::Infinity>();
        if (std::isfinite(t.total) && (t.total > f || tnorm < gradient_norm)) {
          raw_estimates = trial;
          f = t.total;
          cur = std::move(t);
          gradient_norm = tnorm;
          improved = true;
          break;
        }
        scale_back *= 0.5;
      }
      ++iterations;
      if (!improved) break;
    }
    converged = gradient_norm <= opts.gradient_tolerance;
  }
  check_separation(raw_estimates, !converged);

  FitResult res;
  res.spec = spec;
  res.layout = layout;
  res.names = names;
  res.estimates = raw_estimates;
  res.iterations = iterations;
  res.converged = converged;
  res.gradient_norm = gradient_norm;
  res.n_records = static_cast<long>(design.n_records());
  res.n_persons = static_cast<long>(design.n_persons());

  // Final evaluation with per-person scores.
  EvalFlags flags;
  flags.gradient = true;
  flags.person_scores = true;
  EvalOutput final_eval =
      evaluate(layout, design, res.estimates, nodes, flags, opts.threads);
  res.loglik = final_eval.total;
  res.per_person_loglik = final_eval.per_person;

  // Cluster-robust sandwich: A^-1 B A^-1 with A = -Hessian and B the sum of
  // clustered outer score products.
  const int np = layout.size();
  hessian = fd_hessian(res.estimates);

  std::map<std::int64_t, Eigen::VectorXd> cluster_scores;
  for (std::size_t p = 0; p < design.n_persons(); ++p) {
    std::int64_t cl = design.cluster[design.person_first[p]];
    auto [it, inserted] = cluster_scores.try_emplace(cl, Eigen::VectorXd::Zero(np));
    it->second += final_eval.scores.row(static_cast<long>(p)).transpose();
  }
  res.n_clusters = static_cast<long>(cluster_scores.size());
  Eigen::MatrixXd bread = -hessian;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(np, np);
  for (const auto& [cl, s] : cluster_scores) meat += s * s.transpose();

  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (lu.isInvertible()) {
    Eigen::MatrixXd bread_inv = lu.inverse();
    res.covariance = bread_inv * meat * bread_inv.transpose();
    res.covariance = 0.5 * (res.covariance + res.covariance.transpose()).eval();
  } else {
    res.covariance = Eigen::MatrixXd::Constant(np, np,
                                               std::numeric_limits<double>::quiet_NaN());
  }

  // Quadrature drift check at a denser rule.
  if (layout.n_effects > 0 && opts.quadrature_check) {
    int dense = std::max(15, spec.quadrature_nodes);
    NodeSet dense_nodes = nodes_for(spec, layout, dense);
    EvalOutput dense_eval =
        evaluate(layout, design, res.estimates, dense_nodes, {}, opts.threads);
    res.quadrature_drift = std::abs(dense_eval.total - res.loglik);
    res.quadrature_stable = res.quadrature_drift <= 1e-4;
  }

  res.columns = design.columns;
  res.outcome_labels = design.outcome_labels;
  res.lag_labels = design.lag_labels;
  res.column_means = design.column_means();
  res.origin_frequencies = design.origin_frequencies();
  res.manifest = design.manifest();
  return res;
}

}  // namespace

FitResult fit(const ModelSpec& spec, const DesignMatrix& design, const FitOptions& opts) {
  return fit_impl(spec, design, opts);
}

FitResult fit_loan_model(const ModelSpec& spec, const DesignMatrix& design,
                         const FitOptions& opts) {
  if (design.columns_init.size() > 0)
    throw std::invalid_argument("loan designs have no first-period equation");
  return fit_impl(spec, design, opts);
}

std::vector<RrrRow> relative_risk_ratios(const FitResult& fit) {
  std::vector<RrrRow> rows;
  const auto& lo = fit.layout;
  auto push = [&](int idx) {
    RrrRow r;
    r.name = fit.names[idx];
    r.coef = fit.estimates[idx];
    r.se = fit.se(idx);
    r.rrr = std::exp(r.coef);
    r.rrr_se = r.rrr * r.se;
    rows.push_back(std::move(r));
  };
  for (int s = 0; s < lo.n_nonbase(); ++s)
    for (int c = 0; c < lo.n_cols; ++c) push(lo.coef_index(s, c));
  if (lo.heckman)
    for (int s = 0; s < lo.n_nonbase(); ++s)
      for (int c = 0; c < lo.n_init_cols; ++c) push(lo.heckman_coef_index(s, c));
  return rows;
}

namespace {

std::string stars(double z) {
  z = std::abs(z);
  if (z > 2.5758) return "***";
  if (z > 1.9600) return "**";
  if (z > 1.6449) return "*";
  return "";
}

}  // namespace

std::string render_rrr_table(const FitResult& fit) {
  const auto& lo = fit.layout;
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);

  std::vector<int> slots;
  for (int s = 0; s < lo.n_nonbase(); ++s) slots.push_back(s);

  std::size_t name_width = 24;
  for (const auto& c : fit.columns) name_width = std::max(name_width, c.name.size() + 2);

  out << std::string(name_width, ' ');
  for (int s : slots) {
    std::string head = fit.outcome_labels[lo.outcome_of_slot(s)];
    out << "  " << head << std::string(head.size() < 22 ? 22 - head.size() : 1, ' ');
  }
  out << "\n";

  for (int c = 0; c < lo.n_cols; ++c) {
    const std::string& nm = fit.columns[c].name;
    out << nm << std::string(name_width - nm.size(), ' ');
    for (int s : slots) {
      int idx = lo.coef_index(s, c);
      double coef = fit.estimates[idx];
      double se = fit.se(idx);
      std::ostringstream cell;
      cell.setf(std::ios::fixed);
      cell.precision(3);
      cell << std::exp(coef) << stars(se > 0 ? coef / se : 0.0) << " ("
           << std::exp(coef) * se << ")";
      std::string text = cell.str();
      out << "  " << text << std::string(text.size() < 22 ? 22 - text.size() : 1, ' ');
    }
    out << "\n";
  }
  out << "base outcome: " << fit.outcome_labels[lo.base]
      << "; N = " << fit.n_records << "; log-likelihood = " << fit.loglik << "\n";
  return out.str();
}

std::string FitResult::to_json() const {
  Json j;
  j["spec"] = Json::parse(spec.to_json());
  j["names"] = names;
  j["estimates"] = std::vector<double>(estimates.data(), estimates.data() + estimates.size());
  std::vector<double> cov(covariance.size());
  for (long r = 0; r < covariance.rows(); ++r)
    for (long c = 0; c < covariance.cols(); ++c)
      cov[static_cast<std::size_t>(r) * covariance.cols() + c] = covariance(r, c);
  j["covariance_row_major"] = cov;
  j["loglik"] = loglik;
  j["per_person_loglik"] = std::vector<double>(
      per_person_loglik.data(), per_person_loglik.data() + per_person_loglik.size());
  j["gradient_norm"] = gradient_norm;
  j["iterations"] = iterations;
  j["converged"] = converged;
  j["n_records"] = n_records;
  j["n_persons"] = n_persons;
  j["n_clusters"] = n_clusters;
  j["quadrature_stable"] = quadrature_stable;
  j["quadrature_drift"] = quadrature_drift;
  Json cols = Json::array();
  for (const auto& c : columns) {
    Json jc;
    jc["name"] = c.name;
    jc["block"] = to_string(c.block);
    jc["lag_parent"] = c.lag_parent;
    jc["var_parent"] = c.var_parent;
    cols.push_back(jc);
  }
  j["columns"] = cols;
  j["outcome_labels"] = outcome_labels;
  j["lag_labels"] = lag_labels;
  j["column_means"] = std::vector<double>(column_means.data(),
                                          column_means.data() + column_means.size());
  j["origin_frequencies"] =
      std::vector<double>(origin_frequencies.data(),
                          origin_frequencies.data() + origin_frequencies.size());
  j["manifest"] = manifest;
  Json jl;
  jl["n_outcomes"] = layout.n_outcomes;
  jl["base"] = layout.base;
  jl["n_cols"] = layout.n_cols;
  jl["n_init_cols"] = layout.n_init_cols;
  jl["n_effects"] = layout.n_effects;
  jl["heckman"] = layout.heckman;
  j["layout"] = jl;
  return j.dump(2);
}

FitResult FitResult::from_json(const std::string& text) {
  Json j = Json::parse(text);
  FitResult r;
  r.spec = ModelSpec::from_json(j["spec"].dump());
  r.names = j["names"].get<std::vector<std::string>>();
  auto vec = [&](const char* key) {
    auto v = j[key].get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<long>(v.size())).eval();
  };
  r.estimates = vec("estimates");
  auto cov = j["covariance_row_major"].get<std::vector<double>>();
  const long np = r.estimates.size();
  r.covariance.resize(np, np);
  for (long a = 0; a < np; ++a)
    for (long b = 0; b < np; ++b)
      r.covariance(a, b) = cov[static_cast<std::size_t>(a) * np + b];
  r.loglik = j["loglik"];
  r.per_person_loglik = vec("per_person_loglik");
  r.gradient_norm = j["gradient_norm"];
  r.iterations = j["iterations"];
  r.converged = j["converged"];
  r.n_records = j["n_records"];
  r.n_persons = j["n_persons"];
  r.n_clusters = j["n_clusters"];
  r.quadrature_stable = j["quadrature_stable"];
  r.quadrature_drift = j["quadrature_drift"];
  for (const auto& jc : j["columns"]) {
    ColumnInfo c;
    c.name = jc["name"];
    std::string b = jc["block"];
    for (ColumnBlock cb :
         {ColumnBlock::Intercept, ColumnBlock::LagState, ColumnBlock::Current,
          ColumnBlock::Interaction, ColumnBlock::Constant, ColumnBlock::TimeMean,
          ColumnBlock::InitialValue, ColumnBlock::InitialState, ColumnBlock::Year,
          ColumnBlock::EntryWave, ColumnBlock::Instrument})
      if (to_string(cb) == b) c.block = cb;
    c.lag_parent = jc["lag_parent"];
    c.var_parent = jc["var_parent"];
    r.columns.push_back(std::move(c));
  }
  r.outcome_labels = j["outcome_labels"].get<std::vector<std::string>>();
  r.lag_labels = j["lag_labels"].get<std::vector<std::string>>();
  r.column_means = vec("column_means");
  r.origin_frequencies = vec("origin_frequencies");
  r.manifest = j["manifest"];
  const auto& jl = j["layout"];
  r.layout.n_outcomes = jl["n_outcomes"];
  r.layout.base = jl["base"];
  r.layout.n_cols = jl["n_cols"];
  r.layout.n_init_cols = jl["n_init_cols"];
  r.layout.n_effects = jl["n_effects"];
  r.layout.heckman = jl["heckman"];
  return r;
}

}  // namespace dynlab
