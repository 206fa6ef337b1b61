#include "treegp/optimize.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include "treegp/errors.hpp"
#include "treegp/rng.hpp"

namespace treegp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Negated-LML objective over u = log(theta ++ noise). A factorization failure
// reports +inf, which the line search treats as a rejected step.
struct LogSpaceObjective {
  GPModel* model;
  int p;  // kernel hyperparameter count

  bool eval(const Eigen::VectorXd& u, double* f, Eigen::VectorXd* g) const {
    if (!u.allFinite()) return false;
    Eigen::VectorXd theta = u.head(p).array().exp();
    const double noise = std::exp(u[p]);
    // exp over/underflow makes the point infeasible; reject like a failed step
    if (!theta.allFinite() || (theta.array() <= 0.0).any() || !std::isfinite(noise) ||
        noise <= 0.0)
      return false;
    model->theta = std::move(theta);
    model->noise_var = noise;
    try {
      fit(*model, true);
    } catch (const Error& e) {
      if (e.code() == codes::kNotPositiveDefinite) return false;
      throw;
    }
    const double lml = log_marginal_likelihood(*model).total;
    if (!std::isfinite(lml)) return false;
    Eigen::VectorXd grad = lml_gradient(*model);
    *f = -lml;
    g->resize(p + 1);
    g->head(p) = -grad.head(p).cwiseProduct(model->theta);
    (*g)[p] = -grad[p] * model->noise_var;
    return true;
  }
};

struct HistoryEntry {
  Eigen::VectorXd s, y;
  double rho;
};

Eigen::VectorXd lbfgs_direction(const std::deque<HistoryEntry>& history,
                                const Eigen::VectorXd& grad) {
  Eigen::VectorXd q = -grad;
  if (history.empty()) return q;
  std::vector<double> alpha(history.size());
  for (size_t i = history.size(); i-- > 0;) {
    alpha[i] = history[i].rho * history[i].s.dot(q);
    q -= alpha[i] * history[i].y;
  }
  const HistoryEntry& last = history.back();
  q *= last.s.dot(last.y) / last.y.squaredNorm();
  for (size_t i = 0; i < history.size(); ++i) {
    const double beta = history[i].rho * history[i].y.dot(q);
    q += (alpha[i] - beta) * history[i].s;
  }
  return q;
}

struct LineSearchResult {
  bool ok = false;
  double step = 0.0;
  double f = 0.0;
  Eigen::VectorXd u, g;
};

// Strong Wolfe line search (bracket then bisect); non-finite trial points are
// treated as too far and pull the bracket in.
LineSearchResult line_search(const LogSpaceObjective& obj, const Eigen::VectorXd& u0, double f0,
                             const Eigen::VectorXd& g0, const Eigen::VectorXd& dir) {
  constexpr double c1 = 1e-4;
  constexpr double c2 = 0.9;
  const double slope0 = g0.dot(dir);
  LineSearchResult best;
  if (slope0 >= 0.0) return best;

  auto probe = [&](double t, double* f, Eigen::VectorXd* u, Eigen::VectorXd* g) {
    *u = u0 + t * dir;
    return obj.eval(*u, f, g);
  };

  double lo = 0.0, f_lo = f0, slope_lo = slope0;
  Eigen::VectorXd u_lo = u0, g_lo = g0;
  double hi = -1.0, f_hi = 0.0;
  Eigen::VectorXd u_hi, g_hi;

  // Bracketing phase.
  double t = 1.0;
  double t_prev = 0.0, f_prev = f0;
  for (int it = 0; it < 30 && hi < 0.0; ++it) {
    double ft;
    Eigen::VectorXd ut, gt;
    if (!probe(t, &ft, &ut, &gt)) {
      t = t_prev + 0.3 * (t - t_prev);
      continue;
    }
    if (ft > f0 + c1 * t * slope0 || (it > 0 && ft >= f_prev)) {
      hi = t;
      f_hi = ft;
      u_hi = ut;
      g_hi = gt;
      break;
    }
    const double slope_t = gt.dot(dir);
    if (std::abs(slope_t) <= -c2 * slope0) {
      best = {true, t, ft, std::move(ut), std::move(gt)};
      return best;
    }
    lo = t;
    f_lo = ft;
    slope_lo = slope_t;
    u_lo = std::move(ut);
    g_lo = std::move(gt);
    if (slope_t >= 0.0) {
      hi = t_prev;
      // bracket reversed; reuse the previous accepted point as hi
      f_hi = f_prev;
      break;
    }
    t_prev = t;
    f_prev = ft;
    t *= 2.5;
    if (t > 1e6) break;
  }
  if (hi < 0.0) {
    if (f_lo < f0) best = {true, lo, f_lo, std::move(u_lo), std::move(g_lo)};
    return best;
  }

  // Zoom phase by bisection.
  for (int it = 0; it < 30; ++it) {
    t = 0.5 * (lo + hi);
    double ft;
    Eigen::VectorXd ut, gt;
    if (!probe(t, &ft, &ut, &gt)) {
      hi = t;
      continue;
    }
    if (ft > f0 + c1 * t * slope0 || ft >= f_lo) {
      hi = t;
      f_hi = ft;
    } else {
      const double slope_t = gt.dot(dir);
      if (std::abs(slope_t) <= -c2 * slope0) {
        best = {true, t, ft, std::move(ut), std::move(gt)};
        return best;
      }
      if (slope_t * (hi - lo) >= 0.0) {
        hi = lo;
        f_hi = f_lo;
      }
      lo = t;
      f_lo = ft;
      slope_lo = slope_t;
      u_lo = std::move(ut);
      g_lo = std::move(gt);
    }
    if (std::abs(hi - lo) < 1e-14 * std::max(1.0, std::abs(lo))) break;
  }
  (void)slope_lo;
  (void)f_hi;
  if (f_lo < f0 && lo > 0.0) best = {true, lo, f_lo, std::move(u_lo), std::move(g_lo)};
  return best;
}

OptimizeConfig::Range range_for(const OptimizeConfig& cfg, ParamKind kind) {
  switch (kind) {
    case ParamKind::kLambda: return cfg.lambda_range;
    case ParamKind::kAlpha: return cfg.alpha_range;
    case ParamKind::kRbfVariance: return cfg.rbf_variance_range;
    case ParamKind::kRbfLengthscale: return cfg.rbf_lengthscale_range;
  }
  return cfg.lambda_range;
}

}  // namespace

OptimizeResult optimize(GPModel model, const OptimizeConfig& cfg) {
  if (cfg.restarts < 1) fail(codes::kConfig, "optimizer needs at least one restart");
  const int p = model.spec.param_count();
  const auto kinds = model.spec.param_kinds();
  LogSpaceObjective obj{&model, p};
  const Rng master(cfg.seed);

  OptimizeResult result;
  result.lml = -kInf;
  result.trace.restarts.resize(cfg.restarts);

  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng = master.child(r);
    OptTrace::Restart& trace = result.trace.restarts[r];
    const auto t0 = std::chrono::steady_clock::now();

    Eigen::VectorXd u(p + 1);
    for (int i = 0; i < p; ++i) {
      const auto range = range_for(cfg, kinds[i]);
      u[i] = rng.uniform(std::log(range.lo), std::log(range.hi));
    }
    u[p] = rng.uniform(std::log(cfg.noise_range.lo), std::log(cfg.noise_range.hi));
    trace.initial_theta = u.head(p).array().exp();
    trace.initial_noise = std::exp(u[p]);

    double f;
    Eigen::VectorXd g;
    if (!obj.eval(u, &f, &g)) {
      trace.failed = true;
      trace.final_lml = -kInf;
      trace.seconds = seconds_since(t0);
      continue;
    }
    trace.iterations.push_back(
        {0, -f, g.norm(), seconds_since(t0), u.head(p).array().exp(), std::exp(u[p])});

    std::deque<HistoryEntry> history;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
      if (g.norm() <= cfg.grad_tolerance) break;
      Eigen::VectorXd dir = lbfgs_direction(history, g);
      if (g.dot(dir) >= 0.0) {
        history.clear();
        dir = -g;
      }
      const LineSearchResult step = line_search(obj, u, f, g, dir);
      if (!step.ok) break;

      Eigen::VectorXd s = step.u - u;
      Eigen::VectorXd y = step.g - g;
      const double sy = s.dot(y);
      if (sy > 1e-12 * s.norm() * y.norm()) {
        history.push_back({std::move(s), std::move(y), 1.0 / sy});
        if (history.size() > 8) history.pop_front();
      }
      const double improvement = f - step.f;
      u = step.u;
      f = step.f;
      g = step.g;
      trace.iterations.push_back(
          {it, -f, g.norm(), seconds_since(t0), u.head(p).array().exp(), std::exp(u[p])});
      if (improvement <= cfg.lml_tolerance * std::max(1.0, std::abs(f))) break;
    }

    trace.final_lml = -f;
    trace.seconds = seconds_since(t0);
    if (trace.final_lml > result.lml) {
      result.lml = trace.final_lml;
      result.theta = u.head(p).array().exp();
      result.noise_var = std::exp(u[p]);
      result.trace.chosen = r;
    }
  }

  if (result.trace.chosen < 0)
    fail(codes::kAllRestartsFailed, "every restart hit a factorization failure");
  return result;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

namespace {

std::vector<double> linear_grid(double lo, double hi, int size) {
  std::vector<double> v;
  if (size == 1) {
    v.push_back(lo);
    return v;
  }
  for (int i = 0; i < size; ++i) v.push_back(lo + (hi - lo) * i / (size - 1));
  return v;
}

std::vector<double> log_grid(double lo, double hi, int size) {
  std::vector<double> v;
  if (size == 1) {
    v.push_back(lo);
    return v;
  }
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < size; ++i) v.push_back(std::exp(llo + (lhi - llo) * i / (size - 1)));
  return v;
}

}  // namespace

GridSpec GridSpec::regular(const KernelSpec& spec, int size_per_hyper) {
  if (size_per_hyper < 1) fail(codes::kConfig, "grid size must be >= 1");
  GridSpec grid;
  for (ParamKind kind : spec.param_kinds()) {
    switch (kind) {
      case ParamKind::kLambda: grid.values.push_back(linear_grid(1e-8, 1.0, size_per_hyper)); break;
      case ParamKind::kAlpha: grid.values.push_back(linear_grid(1e-4, 2.0, size_per_hyper)); break;
      default: grid.values.push_back(log_grid(1e-2, 10.0, size_per_hyper)); break;
    }
  }
  grid.noise_values = log_grid(1e-3, 1.0, size_per_hyper);
  return grid;
}

std::vector<int> fold_assignment(int rows, int folds, uint64_t seed) {
  if (folds < 2 || folds > rows)
    fail(codes::kConfig, "folds must be in [2, rows]");
  std::vector<int> order(rows);
  for (int i = 0; i < rows; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold(rows);
  for (int i = 0; i < rows; ++i) {
    // contiguous blocks over the shuffled order, sizes differing by at most 1
    const int f = static_cast<int>((static_cast<int64_t>(i) * folds) / rows);
    fold[order[i]] = f;
  }
  return fold;
}

double cv_rmse(const InputSet& inputs, const Eigen::VectorXd& targets, const KernelSpec& spec,
               const Eigen::VectorXd& theta, double noise_var, int folds, uint64_t seed,
               int threads) {
  const int n = inputs.rows();
  const std::vector<int> fold = fold_assignment(n, folds, seed);
  const GramResult gram = gram_matrix(inputs, spec, theta, false, threads);

  double total = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train_rows, val_rows;
    for (int i = 0; i < n; ++i) (fold[i] == f ? val_rows : train_rows).push_back(i);
    const int nt = static_cast<int>(train_rows.size());
    const int nv = static_cast<int>(val_rows.size());

    Eigen::MatrixXd g(nt, nt);
    Eigen::VectorXd y(nt);
    for (int i = 0; i < nt; ++i) {
      y[i] = targets[train_rows[i]];
      for (int j = 0; j < nt; ++j) g(i, j) = gram.K(train_rows[i], train_rows[j]);
    }
    g.diagonal().array() += noise_var;
    auto [lower, jitter] = cholesky_with_jitter(g, gram.K.diagonal().mean());
    (void)jitter;
    const double mean = y.mean();
    Eigen::VectorXd weights = lower.triangularView<Eigen::Lower>().solve(
        Eigen::VectorXd(y.array() - mean));
    lower.triangularView<Eigen::Lower>().transpose().solveInPlace(weights);

    Eigen::VectorXd pred(nv), actual(nv);
    for (int i = 0; i < nv; ++i) {
      double dot = 0.0;
      for (int j = 0; j < nt; ++j) dot += gram.K(val_rows[i], train_rows[j]) * weights[j];
      pred[i] = dot + mean;
      actual[i] = targets[val_rows[i]];
    }
    total += rmse(pred, actual);
  }
  return total / folds;
}

GridResult grid_search(const GPModel& model, const GridSpec& grid, uint64_t seed) {
  const int p = model.spec.param_count();
  if (static_cast<int>(grid.values.size()) != p)
    fail(codes::kConfig, "grid must list values for every kernel hyperparameter");
  for (const auto& axis : grid.values)
    if (axis.empty()) fail(codes::kConfig, "every grid axis needs at least one value");
  if (grid.noise_values.empty()) fail(codes::kConfig, "noise grid axis needs at least one value");

  GridResult result;
  result.mean_rmse = kInf;
  std::vector<size_t> pick(p + 1, 0);
  const auto axis_size = [&](int d) {
    return d < p ? grid.values[d].size() : grid.noise_values.size();
  };

  for (;;) {
    GridEvaluation eval;
    eval.theta.resize(p);
    for (int d = 0; d < p; ++d) eval.theta[d] = grid.values[d][pick[d]];
    eval.noise_var = grid.noise_values[pick[p]];
    try {
      eval.mean_rmse = cv_rmse(model.inputs, model.targets, model.spec, eval.theta, eval.noise_var,
                               grid.folds, seed, model.threads);
    } catch (const Error&) {
      eval.mean_rmse = kInf;
    }
    if (eval.mean_rmse < result.mean_rmse) {
      result.mean_rmse = eval.mean_rmse;
      result.theta = eval.theta;
      result.noise_var = eval.noise_var;
    }
    result.evaluations.push_back(std::move(eval));

    // odometer, last axis fastest
    int d = p;
    while (d >= 0 && ++pick[d] == axis_size(d)) pick[d--] = 0;
    if (d < 0) break;
  }
  if (!std::isfinite(result.mean_rmse))
    fail(codes::kAllRestartsFailed, "every grid point failed to fit");
  return result;
}

}  // namespace treegp
