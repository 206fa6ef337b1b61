#pragma once

#include <Eigen/Dense>
#include <vector>

#include "treegp/kernels.hpp"

namespace treegp {

// Exact Gaussian-likelihood GP regression model. Targets are mean-centered at
// fit time and the mean restored at prediction. A fitted model is immutable
// from the caller's view and safe to share for concurrent predictions.
struct GPModel {
  InputSet inputs;
  Eigen::VectorXd targets;
  KernelSpec spec;
  Eigen::VectorXd theta;
  double noise_var = 0.1;
  int threads = 0;
  bool center = true;  // subtract the target mean at fit time, restore at predict

  // Fitted state.
  bool fitted = false;
  bool has_grads = false;
  double target_mean = 0.0;
  double jitter = 0.0;                     // diagonal increment actually used
  Eigen::MatrixXd chol_lower;              // L with L L^T = K + noise_var I + jitter I
  Eigen::VectorXd weights;                 // (K + noise_var I)^-1 (y - mean)
  Eigen::MatrixXd gram;                    // K (noise-free)
  std::vector<Eigen::MatrixXd> gram_grads; // dK per hyperparameter, when requested
};

// Cholesky with escalating jitter: tries 0, then 1e-8 * diag_scale growing by
// 10x per failure, aborting above 1e-2 * diag_scale. Returns the lower factor
// and the jitter used.
std::pair<Eigen::MatrixXd, double> cholesky_with_jitter(const Eigen::MatrixXd& matrix,
                                                        double diag_scale);

// Computes the Gram matrix (with gradients when `with_grads`), centers the
// targets and caches the factorization. Deterministic given inputs and theta.
void fit(GPModel& model, bool with_grads = false);

struct LmlTerms {
  double total = 0.0;
  double data_fit = 0.0;    // -1/2 y^T G^-1 y, centered targets
  double complexity = 0.0;  // -1/2 log |G|
  double constant = 0.0;    // -(n/2) log 2 pi
};

LmlTerms log_marginal_likelihood(const GPModel& model);

// Exact gradient of the log marginal likelihood over (theta, noise_var); the
// noise component is last. Requires a fit with gradients.
Eigen::VectorXd lml_gradient(const GPModel& model);

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // >= 0, clamped after roundoff
};

Prediction predict(const GPModel& model, const InputSet& test_inputs);

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);
double mae(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);
// Undefined (ConstantVector) when either vector is constant; lengths >= 2.
double pearson(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  double pearson = 0.0;
};

Metrics metrics(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);

}  // namespace treegp
