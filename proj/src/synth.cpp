#include "treegp/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "treegp/errors.hpp"
#include "treegp/gp.hpp"
#include "treegp/rng.hpp"

namespace treegp {

// ---------------------------------------------------------------------------
// Treebank generation
// ---------------------------------------------------------------------------

namespace {

struct Pcfg {
  // alternatives[s] lists right-hand sides as symbol-index sequences
  std::vector<std::vector<std::vector<int>>> alternatives;
  int vocabulary;
  int max_depth;
};

Pcfg build_grammar(const TreebankConfig& cfg, Rng& rng) {
  Pcfg g;
  g.vocabulary = cfg.vocabulary;
  g.max_depth = cfg.max_depth;
  const int s = static_cast<int>(cfg.symbols.size());
  g.alternatives.resize(s);
  for (int sym = 0; sym < s; ++sym) {
    const int n_alt = 2 + static_cast<int>(rng.below(3));
    for (int a = 0; a < n_alt; ++a) {
      const double roll = rng.uniform01();
      const int len = roll < 0.15 ? 1 : (roll < 0.75 ? 2 : 3);
      std::vector<int> rhs(len);
      for (int& e : rhs) e = static_cast<int>(rng.below(s));
      g.alternatives[sym].push_back(std::move(rhs));
    }
  }
  return g;
}

void expand(const Pcfg& g, const TreebankConfig& cfg, Rng& rng, int symbol, int depth,
            int& node_budget, std::string& out) {
  out += '(';
  out += cfg.symbols[symbol];
  --node_budget;
  // Lexical probability grows with depth; the cap makes termination certain.
  const double lex_prob =
      depth == 0 ? 0.0 : std::min(0.85, 0.18 + 0.13 * depth);
  if (depth >= g.max_depth || node_budget <= 0 || rng.uniform01() < lex_prob) {
    out += " w";
    out += std::to_string(rng.below(g.vocabulary));
  } else {
    const auto& alts = g.alternatives[symbol];
    const auto& rhs = alts[rng.below(alts.size())];
    for (int child : rhs) {
      out += ' ';
      expand(g, cfg, rng, child, depth + 1, node_budget, out);
    }
  }
  out += ')';
}

}  // namespace

std::vector<ParsedTree> generate_treebank(const TreebankConfig& cfg, SymbolTable& table) {
  if (cfg.count < 1 || cfg.symbols.empty() || cfg.vocabulary < 1)
    fail(codes::kConfig, "treebank generator needs count, symbols and vocabulary");
  Rng master(cfg.seed);
  Rng grammar_rng = master.child(0);
  const Pcfg grammar = build_grammar(cfg, grammar_rng);
  Rng sample_rng = master.child(1);

  std::vector<ParsedTree> trees;
  trees.reserve(cfg.count);
  while (static_cast<int>(trees.size()) < cfg.count) {
    std::string text;
    int node_budget = 40;
    expand(grammar, cfg, sample_rng, 0, 0, node_budget, text);
    ParsedTree tree = parse_bracketed(text, table);
    if (tree.node_count() < cfg.min_nodes) continue;
    trees.push_back(std::move(tree));
  }
  return trees;
}

// ---------------------------------------------------------------------------
// Prior sampling
// ---------------------------------------------------------------------------

Eigen::VectorXd sample_prior_targets(const InputSet& inputs, const KernelSpec& spec,
                                     const Eigen::VectorXd& theta, double noise_var,
                                     uint64_t seed, int threads) {
  const int n = inputs.rows();
  const GramResult gram = gram_matrix(inputs, spec, theta, false, threads);
  auto [lower, jitter] = cholesky_with_jitter(gram.K, gram.K.diagonal().mean());
  (void)jitter;
  Rng rng(seed);
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  Eigen::VectorXd y = lower.triangularView<Eigen::Lower>() * z;
  if (noise_var > 0.0) {
    const double sd = std::sqrt(noise_var);
    for (int i = 0; i < n; ++i) y[i] += sd * rng.normal();
  }
  return y;
}

// ---------------------------------------------------------------------------
// Experiment harness
// ---------------------------------------------------------------------------

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Split {
  std::vector<int> test_rows;
  std::vector<int> rest_rows;
};

Split fixed_test_split(int pool_rows, int test_size, const Rng& master) {
  if (test_size >= pool_rows)
    fail(codes::kConfig, "test size must leave room for training rows");
  std::vector<int> order(pool_rows);
  for (int i = 0; i < pool_rows; ++i) order[i] = i;
  Rng rng = master.child(0);
  rng.shuffle(order);
  Split s;
  s.test_rows.assign(order.begin(), order.begin() + test_size);
  s.rest_rows.assign(order.begin() + test_size, order.end());
  return s;
}

// One experiment cell: training rows, the fixed test rows and targets drawn
// from the generating prior over exactly the rows in play.
struct Cell {
  InputSet train_inputs;
  InputSet test_inputs;
  Eigen::VectorXd train_targets;
  Eigen::VectorXd test_targets;
};

Cell make_cell(const InputSet& pool, const Split& split, int train_size, const Rng& cell_rng,
               const KernelSpec& generating_spec, const Eigen::VectorXd& generating_theta,
               double generating_noise, int threads) {
  if (train_size > static_cast<int>(split.rest_rows.size()))
    fail(codes::kConfig, "training size exceeds the non-test pool");
  std::vector<int> rest = split.rest_rows;
  Rng shuffle_rng = cell_rng.child(0);
  shuffle_rng.shuffle(rest);
  std::vector<int> used(rest.begin(), rest.begin() + train_size);
  used.insert(used.end(), split.test_rows.begin(), split.test_rows.end());

  const InputSet used_inputs = pool.subset(used);
  const Eigen::VectorXd y = sample_prior_targets(used_inputs, generating_spec, generating_theta,
                                                 generating_noise,
                                                 cell_rng.child(1).base_seed(), threads);
  std::vector<int> train_local(train_size), test_local(split.test_rows.size());
  for (int i = 0; i < train_size; ++i) train_local[i] = i;
  for (size_t i = 0; i < split.test_rows.size(); ++i)
    test_local[i] = train_size + static_cast<int>(i);

  Cell cell;
  cell.train_inputs = used_inputs.subset(train_local);
  cell.test_inputs = used_inputs.subset(test_local);
  cell.train_targets = y.head(train_size);
  cell.test_targets = y.tail(static_cast<int>(split.test_rows.size()));
  return cell;
}

struct FitOutcome {
  Eigen::VectorXd theta;
  double noise_var = 0.0;
  double lml = 0.0;
  double test_rmse = 0.0;
  double jitter = 0.0;
  double seconds = 0.0;
};

FitOutcome fit_and_score(const Cell& cell, const KernelSpec& fitted_spec, OptimizeConfig opt,
                         uint64_t opt_seed, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  GPModel model;
  model.inputs = cell.train_inputs;
  model.targets = cell.train_targets;
  model.spec = fitted_spec;
  model.theta = fitted_spec.default_theta();
  model.threads = threads;
  opt.seed = opt_seed;
  OptimizeResult res = optimize(model, opt);

  model.theta = res.theta;
  model.noise_var = res.noise_var;
  fit(model);
  const Prediction pred = predict(model, cell.test_inputs);

  FitOutcome out;
  out.theta = res.theta;
  out.noise_var = res.noise_var;
  out.lml = res.lml;
  out.test_rmse = rmse(pred.mean, cell.test_targets);
  out.jitter = model.jitter;
  out.seconds = seconds_since(t0);
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

RecoveryReport run_recovery(const InputSet& pool, const KernelSpec& generating_spec,
                            const Eigen::VectorXd& generating_theta, double generating_noise,
                            const KernelSpec& fitted_spec, const SynthConfig& cfg) {
  if (cfg.train_sizes.empty() || cfg.repetitions < 1)
    fail(codes::kConfig, "recovery needs training sizes and repetitions >= 1");
  const Rng master(cfg.seed);
  const Split split = fixed_test_split(pool.rows(), cfg.test_size, master);

  RecoveryReport report;
  report.param_names = fitted_spec.param_names();
  report.param_names.push_back("noise");
  const int p = fitted_spec.param_count();

  for (size_t si = 0; si < cfg.train_sizes.size(); ++si) {
    const int size = cfg.train_sizes[si];
    std::vector<std::vector<double>> log10_values(p + 1);
    std::vector<double> rmses;
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      const Rng cell_rng = master.child(1 + si * 1009 + rep);
      const Cell cell = make_cell(pool, split, size, cell_rng, generating_spec, generating_theta,
                                  generating_noise, cfg.threads);
      const FitOutcome fit_out =
          fit_and_score(cell, fitted_spec, cfg.opt, cell_rng.child(2).base_seed(), cfg.threads);

      RecoveryRecord rec;
      rec.size = size;
      rec.rep = rep;
      rec.theta = fit_out.theta;
      rec.noise_var = fit_out.noise_var;
      rec.lml = fit_out.lml;
      rec.test_rmse = fit_out.test_rmse;
      rec.jitter = fit_out.jitter;
      rec.seconds = fit_out.seconds;
      report.records.push_back(rec);

      for (int j = 0; j < p; ++j) log10_values[j].push_back(std::log10(fit_out.theta[j]));
      log10_values[p].push_back(std::log10(fit_out.noise_var));
      rmses.push_back(fit_out.test_rmse);
    }
    SizeSummary summary;
    summary.size = size;
    summary.median_log10.resize(p + 1);
    summary.q1_log10.resize(p + 1);
    summary.q3_log10.resize(p + 1);
    for (int j = 0; j <= p; ++j) {
      summary.median_log10[j] = quantile(log10_values[j], 0.5);
      summary.q1_log10[j] = quantile(log10_values[j], 0.25);
      summary.q3_log10[j] = quantile(log10_values[j], 0.75);
    }
    summary.median_rmse = quantile(rmses, 0.5);
    report.summaries.push_back(std::move(summary));
  }
  return report;
}

ComparisonReport run_model_comparison(const InputSet& pool, const KernelSpec& generating_spec,
                                      const Eigen::VectorXd& generating_theta,
                                      double generating_noise,
                                      const std::vector<KernelSpec>& fitted_specs,
                                      const std::vector<std::string>& family_names,
                                      const SynthConfig& cfg) {
  if (fitted_specs.empty() || fitted_specs.size() != family_names.size())
    fail(codes::kConfig, "comparison needs aligned model families and names");
  const Rng master(cfg.seed);
  const Split split = fixed_test_split(pool.rows(), cfg.test_size, master);

  ComparisonReport report;
  report.family_names = family_names;
  for (size_t si = 0; si < cfg.train_sizes.size(); ++si) {
    const int size = cfg.train_sizes[si];
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      const Rng cell_rng = master.child(1 + si * 1009 + rep);
      const Cell cell = make_cell(pool, split, size, cell_rng, generating_spec, generating_theta,
                                  generating_noise, cfg.threads);
      for (size_t family = 0; family < fitted_specs.size(); ++family) {
        // families share the restart stream so paired rows differ only by
        // model structure
        const FitOutcome fit_out = fit_and_score(cell, fitted_specs[family], cfg.opt,
                                                 cell_rng.child(2).base_seed(), cfg.threads);
        ComparisonRecord rec;
        rec.size = size;
        rec.rep = rep;
        rec.family = static_cast<int>(family);
        rec.test_rmse = fit_out.test_rmse;
        rec.lml = fit_out.lml;
        rec.jitter = fit_out.jitter;
        rec.seconds = fit_out.seconds;
        report.records.push_back(rec);
      }
    }
  }
  return report;
}

BenchmarkReport run_time_benchmark(const InputSet& pool, const KernelSpec& generating_spec,
                                   const Eigen::VectorXd& generating_theta,
                                   double generating_noise, const KernelSpec& fitted_spec,
                                   const std::vector<int>& iteration_budgets,
                                   const std::vector<int>& grid_granularities, int train_size,
                                   const SynthConfig& cfg) {
  if (iteration_budgets.empty() && grid_granularities.empty())
    fail(codes::kConfig, "benchmark needs iteration budgets or grid granularities");
  const Rng master(cfg.seed);
  const Split split = fixed_test_split(pool.rows(), cfg.test_size, master);

  BenchmarkReport report;
  report.train_size = train_size;
  double target_var_sum = 0.0;

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const Rng cell_rng = master.child(1 + rep);
    // single-core execution for honest wall-clock numbers
    const Cell cell = make_cell(pool, split, train_size, cell_rng, generating_spec,
                                generating_theta, generating_noise, 1);
    const double mean = cell.test_targets.mean();
    target_var_sum +=
        (cell.test_targets.array() - mean).square().sum() / cell.test_targets.size();

    for (int budget : iteration_budgets) {
      OptimizeConfig opt = cfg.opt;
      opt.max_iterations = budget;
      const FitOutcome out =
          fit_and_score(cell, fitted_spec, opt, cell_rng.child(2).base_seed(), 1);
      report.rows.push_back({"gradient", static_cast<double>(budget), rep, out.seconds,
                             out.test_rmse});
    }

    for (int granularity : grid_granularities) {
      const auto t0 = std::chrono::steady_clock::now();
      GPModel model;
      model.inputs = cell.train_inputs;
      model.targets = cell.train_targets;
      model.spec = fitted_spec;
      model.theta = fitted_spec.default_theta();
      model.threads = 1;
      const GridSpec grid = GridSpec::regular(fitted_spec, granularity);
      const GridResult res = grid_search(model, grid, cell_rng.child(3).base_seed());
      model.theta = res.theta;
      model.noise_var = res.noise_var;
      fit(model);
      const Prediction pred = predict(model, cell.test_inputs);
      report.rows.push_back({"grid", static_cast<double>(granularity), rep, seconds_since(t0),
                             rmse(pred.mean, cell.test_targets)});
    }
  }
  report.target_std = std::sqrt(target_var_sum / cfg.repetitions);
  return report;
}

}  // namespace treegp
