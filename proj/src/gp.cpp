#include "treegp/gp.hpp"

#include <cmath>

#include "treegp/errors.hpp"

namespace treegp {

std::pair<Eigen::MatrixXd, double> cholesky_with_jitter(const Eigen::MatrixXd& matrix,
                                                        double diag_scale) {
  const double base = 1e-8 * diag_scale;
  const double cap = 1e-2 * diag_scale;
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd g = matrix;
    if (jitter > 0.0) g.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    if (llt.info() == Eigen::Success) return {Eigen::MatrixXd(llt.matrixL()), jitter};
    if (jitter == 0.0)
      jitter = base;
    else if (jitter * 10.0 <= cap)
      jitter *= 10.0;
    else
      fail(codes::kNotPositiveDefinite,
           "Gram matrix is not positive definite; final jitter tried " + std::to_string(jitter));
  }
}

void fit(GPModel& model, bool with_grads) {
  const int n = model.inputs.rows();
  if (n < 1) fail(codes::kConfig, "model needs at least one training row");
  if (model.targets.size() != n)
    fail(codes::kLengthMismatch, "targets must align with training inputs");
  if (!(model.noise_var >= 0.0) || !std::isfinite(model.noise_var))
    fail(codes::kConfig, "noise variance must be >= 0");

  GramResult gram = gram_matrix(model.inputs, model.spec, model.theta, with_grads, model.threads);
  const double diag_scale = gram.K.diagonal().mean();

  Eigen::MatrixXd g = gram.K;
  g.diagonal().array() += model.noise_var;
  auto [lower, jitter] = cholesky_with_jitter(g, diag_scale);

  model.target_mean = model.center ? model.targets.mean() : 0.0;
  const Eigen::VectorXd centered = model.targets.array() - model.target_mean;
  model.chol_lower = std::move(lower);
  model.jitter = jitter;
  model.weights = model.chol_lower.triangularView<Eigen::Lower>().solve(centered);
  model.chol_lower.triangularView<Eigen::Lower>().transpose().solveInPlace(model.weights);
  model.gram = std::move(gram.K);
  model.gram_grads = std::move(gram.dK);
  model.fitted = true;
  model.has_grads = with_grads;
}

namespace {

void require_fitted(const GPModel& model) {
  if (!model.fitted) fail(codes::kConfig, "model must be fitted first");
}

}  // namespace

LmlTerms log_marginal_likelihood(const GPModel& model) {
  require_fitted(model);
  const int n = model.inputs.rows();
  const Eigen::VectorXd centered = model.targets.array() - model.target_mean;
  LmlTerms t;
  t.data_fit = -0.5 * centered.dot(model.weights);
  t.complexity = -model.chol_lower.diagonal().array().log().sum();
  t.constant = -0.5 * n * std::log(2.0 * M_PI);
  t.total = t.data_fit + t.complexity + t.constant;
  return t;
}

Eigen::VectorXd lml_gradient(const GPModel& model) {
  require_fitted(model);
  if (!model.has_grads) fail(codes::kConfig, "model was fitted without kernel gradients");
  const int n = model.inputs.rows();
  const int p = static_cast<int>(model.gram_grads.size());

  // 1/2 <a a^T - G^-1, dG/dtheta_j>_F per component; dG/dnoise = I.
  Eigen::MatrixXd ginv = Eigen::MatrixXd::Identity(n, n);
  model.chol_lower.triangularView<Eigen::Lower>().solveInPlace(ginv);
  model.chol_lower.triangularView<Eigen::Lower>().transpose().solveInPlace(ginv);
  const Eigen::MatrixXd b = model.weights * model.weights.transpose() - ginv;

  Eigen::VectorXd grad(p + 1);
  for (int j = 0; j < p; ++j) grad[j] = 0.5 * b.cwiseProduct(model.gram_grads[j]).sum();
  grad[p] = 0.5 * b.trace();
  return grad;
}

Prediction predict(const GPModel& model, const InputSet& test_inputs) {
  require_fitted(model);
  const Eigen::MatrixXd cross =
      cross_gram(test_inputs, model.inputs, model.spec, model.theta, model.threads);
  const Eigen::VectorXd diag = gram_diag(test_inputs, model.spec, model.theta);

  Prediction out;
  out.mean = cross * model.weights;
  out.mean.array() += model.target_mean;
  out.variance.resize(cross.rows());
  for (int i = 0; i < cross.rows(); ++i) {
    const Eigen::VectorXd z =
        model.chol_lower.triangularView<Eigen::Lower>().solve(cross.row(i).transpose());
    out.variance[i] = std::max(0.0, diag[i] - z.squaredNorm());
  }
  return out;
}

namespace {

void check_lengths(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0)
    fail(codes::kLengthMismatch, "metric vectors must have equal nonzero lengths");
}

}  // namespace

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
  check_lengths(predicted, actual);
  return std::sqrt((predicted - actual).squaredNorm() / predicted.size());
}

double mae(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
  check_lengths(predicted, actual);
  return (predicted - actual).cwiseAbs().mean();
}

double pearson(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
  check_lengths(predicted, actual);
  if (predicted.size() < 2) fail(codes::kLengthMismatch, "pearson needs at least two points");
  const Eigen::VectorXd a = predicted.array() - predicted.mean();
  const Eigen::VectorXd b = actual.array() - actual.mean();
  const double denom = std::sqrt(a.squaredNorm() * b.squaredNorm());
  if (denom == 0.0)
    fail(codes::kConstantVector, "pearson is undefined for constant vectors");
  return a.dot(b) / denom;
}

Metrics metrics(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
  return Metrics{rmse(predicted, actual), mae(predicted, actual), pearson(predicted, actual)};
}

}  // namespace treegp
