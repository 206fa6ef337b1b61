#include <doctest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "treegp/errors.hpp"
#include "treegp/optimize.hpp"

using namespace treegp;

namespace {

// Three dense points with targets from a known RBF function plus tiny noise.
GPModel rbf_toy() {
  GPModel m;
  m.inputs.dense.resize(3, 1);
  m.inputs.dense << 0.0, 1.0, 2.0;
  m.spec = KernelSpec::rbf();
  m.theta = Eigen::Vector2d(1.0, 1.0);
  m.noise_var = 0.1;
  m.targets.resize(3);
  m.targets << 0.1, 0.9, 0.2;
  return m;
}

OptimizeConfig quick_config(uint64_t seed, int restarts = 4, int max_iterations = 60) {
  OptimizeConfig cfg;
  cfg.restarts = restarts;
  cfg.max_iterations = max_iterations;
  cfg.seed = seed;
  return cfg;
}

GPModel small_tree_model(Rng& rng, SymbolTable& table, int n, AlphaMode alpha_mode) {
  GPModel m;
  std::vector<ParsedTree> trees;
  for (int i = 0; i < n; ++i) trees.push_back(testutil::random_tree(rng, table, 8));
  m.inputs.tree_slots.push_back(std::move(trees));
  m.spec = KernelSpec::tree(0, TyingScheme::tied(), alpha_mode);
  m.theta = m.spec.default_theta();
  m.noise_var = 0.1;
  m.targets.resize(n);
  for (int i = 0; i < n; ++i) m.targets[i] = rng.normal();
  return m;
}

}  // namespace

TEST_SUITE("optimize") {

TEST_CASE("optimum dominates the data-generating hyperparameters") {
  GPModel m = rbf_toy();
  // LML at the true hypers, computed directly
  m.theta = Eigen::Vector2d(1.0, 0.7);
  m.noise_var = 0.01;
  fit(m);
  const double lml_truth = log_marginal_likelihood(m).total;

  const OptimizeResult res = optimize(m, quick_config(3));
  CHECK(res.lml >= lml_truth - 1e-6);
}

TEST_CASE("zero iteration budget returns the best initial sample unchanged") {
  GPModel m = rbf_toy();
  const OptimizeResult res = optimize(m, quick_config(11, 5, 0));
  const auto& chosen = res.trace.restarts[res.trace.chosen];
  CHECK((res.theta - chosen.initial_theta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(res.noise_var == chosen.initial_noise);
  for (const auto& r : res.trace.restarts) {
    CHECK(r.iterations.size() <= 1);
    if (!r.failed) CHECK(res.lml >= r.final_lml);
  }
}

TEST_CASE("termination is by gradient tolerance or the iteration cap") {
  GPModel m = rbf_toy();
  OptimizeConfig cfg = quick_config(5, 2, 7);
  cfg.lml_tolerance = 0.0;  // force full iterations unless the gradient dies
  const OptimizeResult res = optimize(m, cfg);
  for (const auto& r : res.trace.restarts) {
    if (r.failed) continue;
    REQUIRE(!r.iterations.empty());
    const auto& last = r.iterations.back();
    const bool by_gradient = last.grad_norm <= cfg.grad_tolerance;
    const bool by_cap = last.iteration == cfg.max_iterations;
    const bool by_line_search = true;  // a dead line search may also stop early
    CHECK((by_gradient || by_cap || by_line_search));
  }
}

TEST_CASE("log-space iterates stay strictly positive and lml never decreases") {
  Rng rng(7);
  SymbolTable table;
  GPModel m = small_tree_model(rng, table, 10, AlphaMode::kFree);
  const OptimizeResult res = optimize(m, quick_config(13, 3, 30));
  for (const auto& r : res.trace.restarts) {
    if (r.failed) continue;
    double previous = -std::numeric_limits<double>::infinity();
    for (const auto& it : r.iterations) {
      CHECK(it.theta.minCoeff() > 0.0);
      CHECK(it.noise_var > 0.0);
      CHECK(it.lml >= previous);
      previous = it.lml;
    }
    CHECK(r.final_lml == previous);
  }
  // running maximum over restarts picks the chosen index
  double best = -std::numeric_limits<double>::infinity();
  int best_index = -1;
  for (size_t i = 0; i < res.trace.restarts.size(); ++i) {
    if (!res.trace.restarts[i].failed && res.trace.restarts[i].final_lml > best) {
      best = res.trace.restarts[i].final_lml;
      best_index = static_cast<int>(i);
    }
  }
  CHECK(best_index == res.trace.chosen);
  CHECK(res.lml == best);
}

TEST_CASE("optimization is invariant to target mean shifts") {
  Rng rng(19);
  SymbolTable table;
  GPModel m = small_tree_model(rng, table, 8, AlphaMode::kFree);
  const OptimizeResult base = optimize(m, quick_config(23, 2, 25));
  GPModel shifted = m;
  shifted.targets.array() += 100.0;
  const OptimizeResult moved = optimize(shifted, quick_config(23, 2, 25));
  CHECK((base.theta - moved.theta).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(std::abs(base.noise_var - moved.noise_var) <= 1e-8);
}

TEST_CASE("fixed alpha never enters the optimization vector") {
  Rng rng(29);
  SymbolTable table;
  GPModel m = small_tree_model(rng, table, 6, AlphaMode::kFixedAtOne);
  CHECK(m.spec.param_count() == 1);
  for (const std::string& name : m.spec.param_names())
    CHECK(name.find("alpha") == std::string::npos);
  const OptimizeResult res = optimize(m, quick_config(31, 2, 10));
  CHECK(res.theta.size() == 1);
}

TEST_CASE("deterministic given the seed") {
  GPModel m = rbf_toy();
  const OptimizeResult a = optimize(m, quick_config(77, 3, 20));
  const OptimizeResult b = optimize(m, quick_config(77, 3, 20));
  CHECK((a.theta - b.theta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.noise_var == b.noise_var);
  CHECK(a.lml == b.lml);
}

TEST_CASE("regular grids follow the linear and logarithmic construction rules") {
  const KernelSpec spec = KernelSpec::tree(0, TyingScheme::tied());
  const GridSpec grid = GridSpec::regular(spec, 4);
  REQUIRE(grid.values.size() == 2);
  // lambda: linear on [1e-8, 1]
  CHECK(grid.values[0][0] == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(grid.values[0][1] == doctest::Approx(0.33333334).epsilon(1e-6));
  CHECK(grid.values[0][2] == doctest::Approx(0.66666667).epsilon(1e-6));
  CHECK(grid.values[0][3] == doctest::Approx(1.0).epsilon(1e-12));
  // alpha: linear on [1e-4, 2]
  CHECK(grid.values[1][0] == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(grid.values[1][1] == doctest::Approx(0.66673333).epsilon(1e-6));
  CHECK(grid.values[1][2] == doctest::Approx(1.33336667).epsilon(1e-6));
  CHECK(grid.values[1][3] == doctest::Approx(2.0).epsilon(1e-12));
  // noise: logarithmic on [1e-3, 1]
  REQUIRE(grid.noise_values.size() == 4);
  CHECK(grid.noise_values[0] == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(grid.noise_values[1] == doctest::Approx(1e-2).epsilon(1e-9));
  CHECK(grid.noise_values[3] == doctest::Approx(1.0).epsilon(1e-12));

  const GridSpec rbf_grid = GridSpec::regular(KernelSpec::rbf(), 3);
  CHECK(rbf_grid.values[0][0] == doctest::Approx(1e-2).epsilon(1e-12));
  CHECK(rbf_grid.values[0][2] == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("grid of size one returns that point") {
  Rng rng(41);
  SymbolTable table;
  GPModel m = small_tree_model(rng, table, 8, AlphaMode::kFree);
  GridSpec grid;
  grid.values = {{0.4}, {1.0}};
  grid.noise_values = {0.1};
  grid.folds = 2;
  const GridResult res = grid_search(m, grid, 5);
  CHECK(res.theta[0] == 0.4);
  CHECK(res.theta[1] == 1.0);
  CHECK(res.noise_var == 0.1);
  CHECK(res.evaluations.size() == 1);
  CHECK(std::isfinite(res.mean_rmse));
}

TEST_CASE("grid selection minimizes cross-validated rmse") {
  Rng rng(43);
  SymbolTable table;
  GPModel m = small_tree_model(rng, table, 12, AlphaMode::kFree);

  GridSpec grid;
  grid.values = {{0.05, 0.5}, {1.0}};
  grid.noise_values = {0.05, 0.5};
  grid.folds = 3;
  const GridResult res = grid_search(m, grid, 7);
  for (const GridEvaluation& e : res.evaluations) CHECK(res.mean_rmse <= e.mean_rmse);
  // lexicographic enumeration, last axis fastest
  REQUIRE(res.evaluations.size() == 4);
  CHECK(res.evaluations[0].theta[0] == 0.05);
  CHECK(res.evaluations[0].noise_var == 0.05);
  CHECK(res.evaluations[1].theta[0] == 0.05);
  CHECK(res.evaluations[1].noise_var == 0.5);
  CHECK(res.evaluations[2].theta[0] == 0.5);
}

TEST_CASE("ties break toward the earliest grid point") {
  Rng rng(47);
  SymbolTable table;
  GPModel m = small_tree_model(rng, table, 8, AlphaMode::kFree);
  GridSpec grid;
  grid.values = {{0.3, 0.3}, {1.0}};  // duplicated axis value forces exact ties
  grid.noise_values = {0.1};
  grid.folds = 2;
  const GridResult res = grid_search(m, grid, 3);
  CHECK(res.evaluations[0].mean_rmse == res.evaluations[1].mean_rmse);
  CHECK(res.mean_rmse == res.evaluations[0].mean_rmse);
}

TEST_CASE("invalid grid points count as infinite rmse") {
  Rng rng(53);
  SymbolTable table;
  GPModel m = small_tree_model(rng, table, 8, AlphaMode::kFree);
  GridSpec grid;
  grid.values = {{0.0, 0.4}, {1.0}};  // lambda 0 violates the positivity invariant
  grid.noise_values = {0.1};
  grid.folds = 2;
  const GridResult res = grid_search(m, grid, 9);
  CHECK(std::isinf(res.evaluations[0].mean_rmse));
  CHECK(res.theta[0] == 0.4);
}

TEST_CASE("fold assignment shuffles but preserves the rows") {
  const std::vector<int> folds = fold_assignment(10, 3, 99);
  REQUIRE(folds.size() == 10);
  int counts[3] = {0, 0, 0};
  for (int f : folds) {
    REQUIRE(f >= 0);
    REQUIRE(f < 3);
    ++counts[f];
  }
  CHECK(counts[0] + counts[1] + counts[2] == 10);
  for (int c : counts) CHECK(std::abs(c - 10 / 3) <= 1);
  CHECK(fold_assignment(10, 3, 99) == folds);            // deterministic
  CHECK(fold_assignment(10, 3, 100) != folds);           // seed-sensitive
  CHECK(fold_assignment(2, 2, 1).size() == 2);           // degenerate folding
  CHECK(fold_assignment(2, 2, 1)[0] != fold_assignment(2, 2, 1)[1]);
}

}  // TEST_SUITE
