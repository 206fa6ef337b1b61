#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "treegp/gp.hpp"

namespace treegp {

// Gradient-based hyperparameter selection: limited-memory quasi-Newton ascent
// of the log marginal likelihood in unconstrained log-space coordinates, with
// random restarts sampled log-uniformly per hyperparameter kind.
struct OptimizeConfig {
  struct Range {
    double lo = 0.0;
    double hi = 0.0;
  };

  int restarts = 10;
  int max_iterations = 100;
  double grad_tolerance = 1e-5;  // on the log-space gradient norm
  double lml_tolerance = 1e-9;   // relative improvement per accepted step
  uint64_t seed = 0;
  Range lambda_range{1e-4, 1.0};
  Range alpha_range{1e-2, 2.0};
  Range noise_range{1e-3, 1.0};
  Range rbf_variance_range{1e-2, 10.0};
  Range rbf_lengthscale_range{1e-2, 10.0};
};

struct OptIterRecord {
  int iteration = 0;
  double lml = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
  Eigen::VectorXd theta;
  double noise_var = 0.0;
};

struct OptTrace {
  struct Restart {
    std::vector<OptIterRecord> iterations;
    Eigen::VectorXd initial_theta;
    double initial_noise = 0.0;
    double final_lml = 0.0;
    bool failed = false;  // factorization failure at the starting point
    double seconds = 0.0;
  };
  std::vector<Restart> restarts;
  int chosen = -1;  // restart with the maximal final LML
};

struct OptimizeResult {
  Eigen::VectorXd theta;
  double noise_var = 0.0;
  double lml = 0.0;
  OptTrace trace;
};

// Maximizes the LML from `cfg.restarts` random initializations and returns
// the best restart. Deterministic given the seed. A failed Cholesky during
// line search rejects the step; a failure at a starting point fails that
// restart, and AllRestartsFailed is raised when none survives.
OptimizeResult optimize(GPModel model, const OptimizeConfig& cfg);

// Grid-search baseline. Each optimizable hyperparameter gets an ordered value
// list; points are scored by k-fold cross-validated RMSE on the training set
// and ties break toward the earliest point in lexicographic grid order (later
// axes vary fastest, noise last).
struct GridSpec {
  std::vector<std::vector<double>> values;  // one list per kernel hyperparameter
  std::vector<double> noise_values;
  int folds = 3;

  // Regular grids built by the hyperparameter-kind rules: linear on
  // [1e-8, 1] for lambda and [1e-4, 2] for alpha, logarithmic on [1e-3, 1]
  // for the noise variance and [1e-2, 10] for RBF hyperparameters.
  static GridSpec regular(const KernelSpec& spec, int size_per_hyper);
};

struct GridEvaluation {
  Eigen::VectorXd theta;
  double noise_var = 0.0;
  double mean_rmse = 0.0;  // +inf when a fit failed
};

struct GridResult {
  Eigen::VectorXd theta;
  double noise_var = 0.0;
  double mean_rmse = 0.0;
  std::vector<GridEvaluation> evaluations;
};

GridResult grid_search(const GPModel& model, const GridSpec& grid, uint64_t seed);

// Mean validation RMSE of a fixed-hyperparameter fit under seeded k-fold
// cross-validation; one Gram evaluation serves every fold.
double cv_rmse(const InputSet& inputs, const Eigen::VectorXd& targets, const KernelSpec& spec,
               const Eigen::VectorXd& theta, double noise_var, int folds, uint64_t seed,
               int threads);

// Seeded shuffle then contiguous blocks; returns the fold id of every row.
std::vector<int> fold_assignment(int rows, int folds, uint64_t seed);

}  // namespace treegp
