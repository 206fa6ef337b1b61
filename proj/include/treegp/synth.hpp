#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "treegp/kernels.hpp"
#include "treegp/optimize.hpp"

namespace treegp {

// Deterministic synthetic-treebank generator: a random PCFG over a
// configurable symbol set, sampled with a hard depth cap so derivations
// always terminate. The first symbol is the root.
struct TreebankConfig {
  int count = 1000;
  uint64_t seed = 1;
  std::vector<std::string> symbols = {"S", "NP", "VP", "PP", "DT", "NN", "VB", "JJ", "IN", "RB"};
  int vocabulary = 40;
  int max_depth = 6;
  int min_nodes = 3;  // resample smaller trees
};

std::vector<ParsedTree> generate_treebank(const TreebankConfig& cfg, SymbolTable& table);

// Draws response variables from the GP prior over `inputs`: y = L z + sigma_n e
// with z, e standard normal and L the (jittered) Cholesky factor of the Gram
// matrix. Deterministic given the seed.
Eigen::VectorXd sample_prior_targets(const InputSet& inputs, const KernelSpec& spec,
                                     const Eigen::VectorXd& theta, double noise_var,
                                     uint64_t seed, int threads = 0);

// Shared harness settings. All randomness flows from the master seed; the
// held-out test rows are fixed across sizes and repetitions.
struct SynthConfig {
  int test_size = 200;
  std::vector<int> train_sizes;
  int repetitions = 5;
  uint64_t seed = 0;
  OptimizeConfig opt;  // restarts, iteration cap, tolerances (seed is derived)
  int threads = 0;
};

struct RecoveryRecord {
  int size = 0;
  int rep = 0;
  Eigen::VectorXd theta;
  double noise_var = 0.0;
  double lml = 0.0;
  double test_rmse = 0.0;
  double jitter = 0.0;
  double seconds = 0.0;
};

struct SizeSummary {
  int size = 0;
  Eigen::VectorXd median_log10;  // per hyperparameter, noise last
  Eigen::VectorXd q1_log10;
  Eigen::VectorXd q3_log10;
  double median_rmse = 0.0;
};

struct RecoveryReport {
  std::vector<std::string> param_names;  // fitted hyperparameters, then "noise"
  std::vector<RecoveryRecord> records;
  std::vector<SizeSummary> summaries;
};

// Samples targets from the generating prior, fits `fitted_spec` by marginal
// likelihood from random restarts and records recovered hyperparameters and
// held-out RMSE for every (train size, repetition) cell.
RecoveryReport run_recovery(const InputSet& pool, const KernelSpec& generating_spec,
                            const Eigen::VectorXd& generating_theta, double generating_noise,
                            const KernelSpec& fitted_spec, const SynthConfig& cfg);

struct ComparisonRecord {
  int size = 0;
  int rep = 0;
  int family = 0;
  double test_rmse = 0.0;
  double lml = 0.0;
  double jitter = 0.0;
  double seconds = 0.0;
};

struct ComparisonReport {
  std::vector<std::string> family_names;
  std::vector<ComparisonRecord> records;
};

// As run_recovery, but fits every model family on identical targets and
// splits per repetition, recording paired test errors.
ComparisonReport run_model_comparison(const InputSet& pool, const KernelSpec& generating_spec,
                                      const Eigen::VectorXd& generating_theta,
                                      double generating_noise,
                                      const std::vector<KernelSpec>& fitted_specs,
                                      const std::vector<std::string>& family_names,
                                      const SynthConfig& cfg);

struct BenchmarkRow {
  std::string method;  // "gradient" or "grid"
  double setting = 0.0;  // iteration budget or grid granularity
  int rep = 0;
  double seconds = 0.0;
  double test_rmse = 0.0;
};

struct BenchmarkReport {
  int train_size = 0;
  double target_std = 0.0;  // pooled test-target standard deviation
  std::vector<BenchmarkRow> rows;
};

// Wall-clock-versus-error benchmark: gradient optimization at increasing
// iteration budgets against grid search at increasing granularities, on a
// fixed test split. Runs single-threaded for honest timings.
BenchmarkReport run_time_benchmark(const InputSet& pool, const KernelSpec& generating_spec,
                                   const Eigen::VectorXd& generating_theta,
                                   double generating_noise, const KernelSpec& fitted_spec,
                                   const std::vector<int>& iteration_budgets,
                                   const std::vector<int>& grid_granularities, int train_size,
                                   const SynthConfig& cfg);

}  // namespace treegp
