// Acceptance suite: runs every toolkit-level criterion end to end and prints
// one PASS/FAIL line per criterion. The CLI binary and the bundled dataset
// directory arrive through TREEGP_CLI and TREEGP_DATA.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "treegp/dataset.hpp"
#include "treegp/errors.hpp"
#include "treegp/gp.hpp"
#include "treegp/optimize.hpp"
#include "treegp/rng.hpp"
#include "treegp/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace treegp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double elapsed(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string g_cli;
fs::path g_data;
fs::path g_scratch;

int run_cli(const std::string& args) {
  const std::string cmd = "\"" + g_cli + "\" " + args + " > " +
                          (g_scratch / "cli_stdout.txt").string() + " 2> " +
                          (g_scratch / "cli_stderr.txt").string();
  return std::system(cmd.c_str());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

json read_json(const fs::path& path) {
  json j;
  std::ifstream in(path);
  in >> j;
  return j;
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

std::string random_tree_text(Rng& rng, int max_nonterminals) {
  static const char* kSymbols[] = {"S", "A", "B", "C", "D"};
  static const char* kWords[] = {"a", "b", "c", "d", "e"};
  int budget = max_nonterminals;
  std::string out;
  auto gen = [&](auto&& self, int depth) -> void {
    out += '(';
    out += kSymbols[rng.below(5)];
    --budget;
    const bool lexical = budget <= 0 || depth >= 4 || rng.uniform01() < 0.35;
    if (lexical) {
      out += ' ';
      out += kWords[rng.below(5)];
    } else {
      const int kids = 1 + static_cast<int>(rng.below(3));
      for (int i = 0; i < kids && budget > 0; ++i) {
        out += ' ';
        self(self, depth + 1);
      }
    }
    out += ')';
  };
  gen(gen, 0);
  return out;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

InputSet shared_pool(std::shared_ptr<SymbolTable>& table_out) {
  auto table = std::make_shared<SymbolTable>();
  TreebankConfig cfg;
  cfg.count = 1000;
  cfg.seed = 20240810;
  InputSet pool;
  pool.table = table;
  pool.tree_slots.push_back(generate_treebank(cfg, *table));
  table_out = table;
  return pool;
}

// ---------------------------------------------------------------------------
// Criterion 1: fixture exactness
// ---------------------------------------------------------------------------

Outcome criterion_fixture() {
  SymbolTable table;
  const ParsedTree t = parse_bracketed("(S (A a) (B b))", table);
  const auto h = TreeKernelHypers::constant(1, 1.0, 1.0);
  const double raw = sstk_value(t, t, h, TyingScheme::tied());
  const double normalized = normalize_value(raw, raw, raw);
  if (raw != 6.0) return {false, "unnormalized self kernel is " + std::to_string(raw)};
  if (normalized != 1.0) return {false, "normalized self kernel is " + std::to_string(normalized)};

  // the CLI agrees, through its file interface
  const fs::path dir = g_scratch / "c1";
  std::ofstream(g_scratch / "fig1.trees") << "(S (A a) (B b))\n";
  if (run_cli("kernel --trees " + (g_scratch / "fig1.trees").string() + " --lambda 1 " +
              "--alpha-value 1 --no-normalize --out " + dir.string()) != 0)
    return {false, "CLI kernel command failed"};
  if (read_file(dir / "gram.csv") != "6\n")
    return {false, "CLI gram.csv is not exactly 6"};
  if (run_cli("kernel --trees " + (g_scratch / "fig1.trees").string() + " --lambda 1 " +
              "--alpha-value 1 --normalize --out " + dir.string()) != 0)
    return {false, "CLI kernel command failed (normalized)"};
  if (read_file(dir / "gram.csv") != "1\n")
    return {false, "CLI normalized gram.csv is not exactly 1"};
  return {true, "k(t,t) = 6 unnormalized, 1 normalized, library and CLI"};
}

// ---------------------------------------------------------------------------
// Criterion 2: oracle equivalence on 200 random pairs
// ---------------------------------------------------------------------------

Outcome criterion_oracle() {
  Rng rng(777);
  SymbolTable table;
  const double alphas[] = {0.0, 0.5, 1.0};
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const ParsedTree t1 = parse_bracketed(random_tree_text(rng, 8), table);
    const ParsedTree t2 = parse_bracketed(random_tree_text(rng, 8), table);
    const bool tied = i % 2 == 0;
    const TyingScheme scheme = tied ? TyingScheme::tied() : TyingScheme::per_symbol(table);
    TreeKernelHypers h;
    h.lambda.resize(scheme.group_count());
    h.alpha.resize(scheme.group_count());
    for (int g = 0; g < scheme.group_count(); ++g) {
      h.lambda[g] = rng.uniform(1e-3, 1.0);
      h.alpha[g] = alphas[rng.below(3)];
    }
    const double dp = sstk_value(t1, t2, h, scheme);
    const double oracle = brute_force_kernel(t1, t2, h, scheme, 8);
    const double err = std::abs(dp - oracle) / std::max(1.0, dp);
    worst = std::max(worst, err);
    if (err > 1e-10)
      return {false, "pair " + std::to_string(i) + " disagrees by " + std::to_string(err)};
  }
  std::ostringstream detail;
  detail << "200 pairs, SSTK and symbol-aware, worst relative error " << worst;
  return {true, detail.str()};
}

// ---------------------------------------------------------------------------
// Criterion 3: finite-difference gradient suites
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  Rng rng(4242);
  SymbolTable table;
  double worst_kernel = 0.0, worst_norm = 0.0, worst_lml = 0.0;

  // (a) kernel lambda/alpha gradients
  for (int i = 0; i < 50; ++i) {
    const ParsedTree t1 = parse_bracketed(random_tree_text(rng, 8), table);
    const ParsedTree t2 = parse_bracketed(random_tree_text(rng, 8), table);
    const TyingScheme scheme = i % 2 == 0 ? TyingScheme::tied() : TyingScheme::per_symbol(table);
    TreeKernelHypers h;
    h.lambda.resize(scheme.group_count());
    h.alpha.resize(scheme.group_count());
    for (int g = 0; g < scheme.group_count(); ++g) {
      h.lambda[g] = rng.uniform(0.05, 1.0);
      h.alpha[g] = rng.uniform(0.05, 1.5);
    }
    const TreeKernelResult r = sstk_with_grads(t1, t2, h, scheme);
    for (int g = 0; g < scheme.group_count(); ++g) {
      const double sl = 1e-6 * h.lambda[g];
      TreeKernelHypers hp = h, hm = h;
      hp.lambda[g] += sl;
      hm.lambda[g] -= sl;
      const double fd_l =
          (sstk_value(t1, t2, hp, scheme) - sstk_value(t1, t2, hm, scheme)) / (2 * sl);
      worst_kernel = std::max(worst_kernel, rel_err(fd_l, r.d_lambda[g]));
      const double sa = 1e-6 * h.alpha[g];
      hp = h;
      hm = h;
      hp.alpha[g] += sa;
      hm.alpha[g] -= sa;
      const double fd_a =
          (sstk_value(t1, t2, hp, scheme) - sstk_value(t1, t2, hm, scheme)) / (2 * sa);
      worst_kernel = std::max(worst_kernel, rel_err(fd_a, r.d_alpha[g]));
    }
  }
  if (worst_kernel > 1e-4) return {false, "kernel gradient error " + std::to_string(worst_kernel)};

  // (b) normalized-kernel gradients
  for (int i = 0; i < 50; ++i) {
    const ParsedTree t1 = parse_bracketed(random_tree_text(rng, 8), table);
    const ParsedTree t2 = parse_bracketed(random_tree_text(rng, 8), table);
    const TyingScheme scheme = TyingScheme::tied();
    TreeKernelHypers h = TreeKernelHypers::constant(1, rng.uniform(0.05, 1.0),
                                                    rng.uniform(0.05, 1.5));
    auto norm_value = [&](const TreeKernelHypers& hh) {
      return normalize_value(sstk_value(t1, t2, hh, scheme), sstk_value(t1, t1, hh, scheme),
                             sstk_value(t2, t2, hh, scheme));
    };
    const TreeKernelResult r12 = sstk_with_grads(t1, t2, h, scheme);
    const TreeKernelResult r11 = sstk_with_grads(t1, t1, h, scheme);
    const TreeKernelResult r22 = sstk_with_grads(t2, t2, h, scheme);
    double value;
    Eigen::VectorXd grad;
    Eigen::VectorXd d12(2), d11(2), d22(2);
    d12 << r12.d_lambda[0], r12.d_alpha[0];
    d11 << r11.d_lambda[0], r11.d_alpha[0];
    d22 << r22.d_lambda[0], r22.d_alpha[0];
    normalize_with_grads(r12.value, r11.value, r22.value, d12, d11, d22, &value, &grad);
    for (int j = 0; j < 2; ++j) {
      double* coord = j == 0 ? &h.lambda[0] : &h.alpha[0];
      const double step = 1e-6 * *coord;
      TreeKernelHypers hp = h, hm = h;
      (j == 0 ? hp.lambda[0] : hp.alpha[0]) += step;
      (j == 0 ? hm.lambda[0] : hm.alpha[0]) -= step;
      const double fd = (norm_value(hp) - norm_value(hm)) / (2 * step);
      worst_norm = std::max(worst_norm, rel_err(fd, grad[j]));
    }
  }
  if (worst_norm > 1e-4) return {false, "normalized gradient error " + std::to_string(worst_norm)};

  // (c) marginal-likelihood gradients including the noise variance
  for (int i = 0; i < 50; ++i) {
    GPModel m;
    std::vector<ParsedTree> trees;
    for (int j = 0; j < 6; ++j) trees.push_back(parse_bracketed(random_tree_text(rng, 8), table));
    m.inputs.tree_slots.push_back(std::move(trees));
    m.spec = KernelSpec::tree(0, TyingScheme::tied(), AlphaMode::kFree, i % 2 == 0);
    m.theta = Eigen::Vector2d(rng.uniform(0.1, 0.9), rng.uniform(0.2, 1.5));
    m.noise_var = rng.uniform(0.05, 0.5);
    m.targets.resize(6);
    for (int j = 0; j < 6; ++j) m.targets[j] = rng.normal();
    fit(m, true);
    const Eigen::VectorXd grad = lml_gradient(m);
    auto lml_at = [&](double theta0, double theta1, double noise) {
      GPModel mm = m;
      mm.theta = Eigen::Vector2d(theta0, theta1);
      mm.noise_var = noise;
      fit(mm);
      return log_marginal_likelihood(mm).total;
    };
    const double s0 = 1e-6 * m.theta[0];
    const double s1 = 1e-6 * m.theta[1];
    const double sn = 1e-6 * m.noise_var;
    const double fd0 = (lml_at(m.theta[0] + s0, m.theta[1], m.noise_var) -
                        lml_at(m.theta[0] - s0, m.theta[1], m.noise_var)) /
                       (2 * s0);
    const double fd1 = (lml_at(m.theta[0], m.theta[1] + s1, m.noise_var) -
                        lml_at(m.theta[0], m.theta[1] - s1, m.noise_var)) /
                       (2 * s1);
    const double fdn = (lml_at(m.theta[0], m.theta[1], m.noise_var + sn) -
                        lml_at(m.theta[0], m.theta[1], m.noise_var - sn)) /
                       (2 * sn);
    worst_lml = std::max({worst_lml, rel_err(fd0, grad[0]), rel_err(fd1, grad[1]),
                          rel_err(fdn, grad[2])});
  }
  if (worst_lml > 1e-4) return {false, "LML gradient error " + std::to_string(worst_lml)};

  std::ostringstream detail;
  detail << "worst relative errors: kernel " << worst_kernel << ", normalized " << worst_norm
         << ", LML " << worst_lml;
  return {true, detail.str()};
}

// ---------------------------------------------------------------------------
// Criterion 4: symbol-aware kernel with tied groups reduces to the tied kernel
// ---------------------------------------------------------------------------

Outcome criterion_reduction() {
  Rng rng(31337);
  SymbolTable table;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const ParsedTree t1 = parse_bracketed(random_tree_text(rng, 8), table);
    const ParsedTree t2 = parse_bracketed(random_tree_text(rng, 8), table);
    const double lambda = rng.uniform(0.01, 1.0);
    const double alpha = rng.uniform(0.0, 2.0);
    const TyingScheme full = TyingScheme::per_symbol(table);
    const double tied =
        sstk_value(t1, t2, TreeKernelHypers::constant(1, lambda, alpha), TyingScheme::tied());
    const double aware =
        sstk_value(t1, t2, TreeKernelHypers::constant(full.group_count(), lambda, alpha), full);
    const double err = std::abs(tied - aware) / std::max(1.0, std::abs(tied));
    worst = std::max(worst, err);
    if (err > 1e-12)
      return {false, "pair " + std::to_string(i) + " differs by " + std::to_string(err)};
  }
  return {true, "100 pairs, worst relative difference " + std::to_string(worst)};
}

// ---------------------------------------------------------------------------
// Criterion 5: hyperparameter recovery at desk scale
// ---------------------------------------------------------------------------

Outcome criterion_recovery() {
  std::shared_ptr<SymbolTable> table;
  const InputSet pool = shared_pool(table);
  const KernelSpec spec = KernelSpec::tree(0, TyingScheme::tied(), AlphaMode::kFree, false);

  SynthConfig cfg;
  cfg.test_size = 200;
  cfg.train_sizes = {50, 200, 400};
  cfg.repetitions = 5;
  cfg.seed = 99;
  cfg.opt.restarts = 5;
  cfg.opt.max_iterations = 100;
  cfg.threads = 0;

  const RecoveryReport rep =
      run_recovery(pool, spec, Eigen::Vector2d(0.001, 1.0), 0.01, spec, cfg);

  auto median_abs_dev = [&](int size, int param, double target_log10) {
    std::vector<double> devs;
    for (const RecoveryRecord& r : rep.records)
      if (r.size == size)
        devs.push_back(std::abs(
            (param < 2 ? std::log10(r.theta[param]) : std::log10(r.noise_var)) - target_log10));
    std::sort(devs.begin(), devs.end());
    return devs[devs.size() / 2];
  };
  const double lambda_dev = median_abs_dev(200, 0, -3.0);
  const double noise_dev = median_abs_dev(200, 2, -2.0);

  std::vector<double> median_rmse;
  for (const SizeSummary& s : rep.summaries) median_rmse.push_back(s.median_rmse);

  std::ostringstream detail;
  detail << "size 200: median |dlog10 lambda| = " << lambda_dev << ", median |dlog10 noise| = "
         << noise_dev << "; median RMSE " << median_rmse[0] << " > " << median_rmse[1] << " > "
         << median_rmse[2];
  if (lambda_dev > 0.5) return {false, detail.str() + " (lambda recovery too loose)"};
  if (noise_dev > 0.5) return {false, detail.str() + " (noise recovery too loose)"};
  if (!(median_rmse[0] > median_rmse[1] && median_rmse[1] > median_rmse[2]))
    return {false, detail.str() + " (median RMSE not strictly decreasing)"};
  return {true, detail.str()};
}

// ---------------------------------------------------------------------------
// Criterion 6: symbol-aware advantage on symbol-aware data
// ---------------------------------------------------------------------------

Outcome criterion_comparison() {
  std::shared_ptr<SymbolTable> table;
  const InputSet pool = shared_pool(table);
  const TyingScheme subset_s = TyingScheme::subset(*table, {"S"});
  const KernelSpec gen_spec = KernelSpec::tree(0, subset_s, AlphaMode::kFree, false);
  Eigen::VectorXd gen_theta(4);
  gen_theta << 0.5, 0.001, 1.0, 0.1;  // lambda_S, lambda, alpha_S, alpha

  const std::vector<KernelSpec> families = {
      KernelSpec::tree(0, subset_s, AlphaMode::kFree, false),
      KernelSpec::tree(0, TyingScheme::tied(), AlphaMode::kFree, false)};

  SynthConfig cfg;
  cfg.test_size = 200;
  cfg.train_sizes = {50, 100, 200};
  cfg.repetitions = 5;
  cfg.seed = 7;
  cfg.opt.restarts = 5;
  cfg.opt.max_iterations = 100;
  cfg.threads = 0;

  const ComparisonReport rep = run_model_comparison(pool, gen_spec, gen_theta, 0.01, families,
                                                    {"sasstk_s", "sstk"}, cfg);
  std::ostringstream detail;
  bool pass = true;
  for (int size : {100, 200}) {
    double mean[2] = {0.0, 0.0};
    int count[2] = {0, 0};
    for (const ComparisonRecord& r : rep.records)
      if (r.size == size) {
        mean[r.family] += r.test_rmse;
        ++count[r.family];
      }
    mean[0] /= count[0];
    mean[1] /= count[1];
    detail << "size " << size << ": sasstk_s " << mean[0] << " vs sstk " << mean[1] << "; ";
    if (!(mean[0] < mean[1])) pass = false;
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// Criterion 7: wall-clock benchmark, gradient against grids
// ---------------------------------------------------------------------------

Outcome criterion_benchmark() {
  std::shared_ptr<SymbolTable> table;
  const InputSet pool = shared_pool(table);
  const KernelSpec spec = KernelSpec::tree(0, TyingScheme::tied(), AlphaMode::kFree, false);

  SynthConfig cfg;
  cfg.test_size = 200;
  cfg.repetitions = 5;
  cfg.seed = 11;
  cfg.opt.restarts = 5;
  cfg.opt.max_iterations = 100;

  const std::vector<int> budgets = {0, 2, 5, 10, 20, 40};
  const std::vector<int> granularities = {2, 3, 4, 6};
  const BenchmarkReport rep = run_time_benchmark(pool, spec, Eigen::Vector2d(0.001, 1.0), 0.01,
                                                 spec, budgets, granularities, 200, cfg);

  std::map<std::pair<std::string, double>, std::pair<double, double>> sums;
  std::map<std::pair<std::string, double>, int> counts;
  for (const BenchmarkRow& r : rep.rows) {
    const auto key = std::make_pair(r.method, r.setting);
    sums[key].first += r.seconds;
    sums[key].second += r.test_rmse;
    counts[key] += 1;
  }
  auto mean_secs = [&](const std::string& m, double s) {
    return sums[{m, s}].first / counts[{m, s}];
  };
  auto mean_rmse = [&](const std::string& m, double s) {
    return sums[{m, s}].second / counts[{m, s}];
  };

  const double finest = granularities.back();
  const double grid_rmse = mean_rmse("grid", finest);
  const double grid_secs = mean_secs("grid", finest);
  const double target = grid_rmse + 0.05 * rep.target_std;
  const double final_rmse = mean_rmse("gradient", budgets.back());

  double time_to_target = -1.0;
  for (int b : budgets)
    if (mean_rmse("gradient", b) <= target) {
      time_to_target = mean_secs("gradient", b);
      break;
    }

  std::ostringstream detail;
  detail << "gradient final RMSE " << final_rmse << " vs grid(" << finest << ") " << grid_rmse
         << " + 0.05 std = " << target << "; time to target " << time_to_target
         << "s vs grid total " << grid_secs << "s";
  if (final_rmse > target) return {false, detail.str() + " (final RMSE above target)"};
  if (time_to_target < 0.0) return {false, detail.str() + " (no budget reached the target)"};
  if (!(time_to_target < grid_secs)) return {false, detail.str() + " (gradient not faster)"};
  return {true, detail.str()};
}

// ---------------------------------------------------------------------------
// Criterion 8: cross-validation beats the mean predictor on the bundled data
// ---------------------------------------------------------------------------

Outcome criterion_crossval() {
  const fs::path trees = g_data / "synth200.trees";
  const fs::path targets = g_data / "synth200.targets";
  if (!fs::exists(trees) || !fs::exists(targets))
    return {false, "bundled dataset missing under " + g_data.string()};
  const fs::path dir = g_scratch / "c8";
  if (run_cli("crossval --trees " + trees.string() + " --targets " + targets.string() +
              " --kernel sstk --no-normalize --folds 5 --restarts 3 --max-iters 50 --seed 7" +
              " --out " + dir.string()) != 0)
    return {false, "CLI crossval failed"};
  const json report = read_json(dir / "report.json");
  const double rmse = report["results"]["aggregate"]["rmse"].get<double>();
  const double baseline = report["results"]["aggregate"]["baseline_rmse"].get<double>();
  std::ostringstream detail;
  detail << "aggregate RMSE " << rmse << " vs mean-predictor " << baseline << " ("
         << (100.0 * (1.0 - rmse / baseline)) << "% better)";
  if (!(rmse <= 0.8 * baseline)) return {false, detail.str() + " (needs >= 20%)"};
  return {true, detail.str()};
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical reruns of every CLI command
// ---------------------------------------------------------------------------

// Timing never participates in the comparison: keys containing "seconds" and
// the "timings" object are scrubbed from JSON reports, and "seconds" columns
// are dropped from CSVs.
void scrub_wall_clock(json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end();) {
      if (it.key() == "timings" || it.key().find("seconds") != std::string::npos)
        it = j.erase(it);
      else
        scrub_wall_clock(*it++);
    }
  } else if (j.is_array()) {
    for (json& item : j) scrub_wall_clock(item);
  }
}

std::string normalized_output(const fs::path& path) {
  if (path.extension() == ".json") {
    json j = read_json(path);
    scrub_wall_clock(j);
    return j.dump(2);
  }
  std::string content = read_file(path);
  if (path.extension() == ".csv") {
    std::istringstream in(content);
    std::string header;
    if (std::getline(in, header)) {
      std::vector<bool> keep;
      bool drops_any = false;
      std::string col;
      std::istringstream hs(header);
      while (std::getline(hs, col, ',')) {
        const bool wall_clock = col.find("seconds") != std::string::npos;
        keep.push_back(!wall_clock);
        drops_any = drops_any || wall_clock;
      }
      if (drops_any) {
        std::ostringstream out;
        std::string line = header;
        do {
          std::istringstream ls(line);
          std::string field;
          size_t i = 0;
          bool first = true;
          while (std::getline(ls, field, ',')) {
            if (i < keep.size() && !keep[i++]) continue;
            out << (first ? "" : ",") << field;
            first = false;
          }
          out << '\n';
        } while (std::getline(in, line));
        return out.str();
      }
    }
  }
  return content;
}

bool rerun_matches(const std::string& args, const std::string& name, std::string* detail) {
  const fs::path dir_a = g_scratch / ("det_" + name + "_a");
  const fs::path dir_b = g_scratch / ("det_" + name + "_b");
  if (run_cli(args + " --out " + dir_a.string()) != 0 ||
      run_cli(args + " --out " + dir_b.string()) != 0) {
    *detail = name + ": command failed";
    return false;
  }
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    const fs::path other = dir_b / entry.path().filename();
    if (!fs::exists(other)) {
      *detail = name + ": missing " + entry.path().filename().string() + " on rerun";
      return false;
    }
    if (normalized_output(entry.path()) != normalized_output(other)) {
      *detail = name + ": " + entry.path().filename().string() + " differs between reruns";
      return false;
    }
  }
  return true;
}

Outcome criterion_determinism() {
  // one small dataset powers train/predict/crossval
  const fs::path synth_dir = g_scratch / "det_data";
  if (run_cli("synth --count 40 --lambda 0.05 --noise 0.01 --seed 5 --out " +
              synth_dir.string()) != 0)
    return {false, "synth for the determinism dataset failed"};
  const std::string trees = (synth_dir / "trees.txt").string();
  const std::string targets = (synth_dir / "targets.csv").string();

  std::string detail;
  if (!rerun_matches("kernel --trees " + trees + " --lambda 0.4 --alpha-value 1 --grads --seed 3",
                     "kernel", &detail))
    return {false, detail};
  if (!rerun_matches("synth --count 30 --lambda 0.05 --noise 0.01 --seed 9", "synth", &detail))
    return {false, detail};
  if (!rerun_matches("train --trees " + trees + " --targets " + targets +
                         " --kernel sstk --no-normalize --restarts 2 --max-iters 15 --seed 11",
                     "train", &detail))
    return {false, detail};

  // predict against one of the trained models
  const fs::path model = g_scratch / "det_train_a" / "model.json";
  const fs::path pred_a = g_scratch / "det_predict_a";
  const fs::path pred_b = g_scratch / "det_predict_b";
  if (run_cli("predict --model " + model.string() + " --trees " + trees + " --out " +
              pred_a.string()) != 0 ||
      run_cli("predict --model " + model.string() + " --trees " + trees + " --out " +
              pred_b.string()) != 0)
    return {false, "predict: command failed"};
  if (normalized_output(pred_a / "predictions.csv") != normalized_output(pred_b / "predictions.csv"))
    return {false, "predict: predictions.csv differs between reruns"};

  if (!rerun_matches("crossval --trees " + trees + " --targets " + targets +
                         " --kernel sstk --no-normalize --folds 3 --restarts 1 --max-iters 10" +
                         " --seed 13",
                     "crossval", &detail))
    return {false, detail};
  if (!rerun_matches("recover --count 60 --test-size 20 --sizes 12 --reps 1 --restarts 1" +
                         std::string(" --max-iters 5 --seed 17"),
                     "recover", &detail))
    return {false, detail};
  if (!rerun_matches("compare --count 60 --test-size 20 --sizes 12 --reps 1 --restarts 1" +
                         std::string(" --max-iters 5 --seed 19"),
                     "compare", &detail))
    return {false, detail};
  if (!rerun_matches("benchmark --count 60 --test-size 20 --train-size 15 --reps 1" +
                         std::string(" --restarts 1 --budgets 0,2 --grid-sizes 2 --seed 23"),
                     "benchmark", &detail))
    return {false, detail};
  return {true, "eight commands rerun byte-identically (timing fields excluded)"};
}

}  // namespace

int main() {
  const char* cli = std::getenv("TREEGP_CLI");
  const char* data = std::getenv("TREEGP_DATA");
  if (!cli || !data) {
    std::cerr << "TREEGP_CLI and TREEGP_DATA must point at the CLI binary and the data dir\n";
    return 2;
  }
  g_cli = cli;
  g_data = data;
  g_scratch = fs::current_path() / "acceptance_scratch";
  fs::remove_all(g_scratch);
  fs::create_directories(g_scratch);

  struct Criterion {
    int number;
    std::string name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "fixture exactness", criterion_fixture},
      {2, "oracle equivalence", criterion_oracle},
      {3, "finite-difference gradient suites", criterion_gradients},
      {4, "symbol-aware reduction to the tied kernel", criterion_reduction},
      {5, "hyperparameter recovery", criterion_recovery},
      {6, "symbol-aware advantage", criterion_comparison},
      {7, "gradient-versus-grid wall clock", criterion_benchmark},
      {8, "cross-validation beats the mean predictor", criterion_crossval},
      {9, "deterministic CLI reruns", criterion_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %d: %s — %s (%.1fs)\n", outcome.pass ? "PASS" : "FAIL", c.number,
                c.name.c_str(), outcome.detail.c_str(), elapsed(t0));
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
