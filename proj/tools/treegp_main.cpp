// treegp — structural-kernel Gaussian process regression toolkit.
//
// Subcommands: kernel, train, predict, crossval, synth, recover, compare,
// benchmark. Every command is deterministic given its flags and seed; timing
// lives only in the "timings" object of the JSON reports and the "seconds"
// CSV columns.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "treegp/dataset.hpp"
#include "treegp/errors.hpp"
#include "treegp/gp.hpp"
#include "treegp/optimize.hpp"
#include "treegp/report.hpp"
#include "treegp/rng.hpp"
#include "treegp/synth.hpp"
#include "treegp/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace treegp;

namespace {

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

double elapsed(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string field;
  for (char c : s) {
    if (c == ',') {
      if (!field.empty()) out.push_back(field);
      field.clear();
    } else {
      field += c;
    }
  }
  if (!field.empty()) out.push_back(field);
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const std::string& f : split_list(s)) {
    try {
      out.push_back(std::stod(f));
    } catch (const std::exception&) {
      fail(codes::kConfig, flag + ": cannot parse number '" + f + "'");
    }
  }
  if (out.empty()) fail(codes::kConfig, flag + ": empty list");
  return out;
}

std::vector<int> parse_ints(const std::string& s, const std::string& flag) {
  std::vector<int> out;
  for (double v : parse_doubles(s, flag)) out.push_back(static_cast<int>(v));
  return out;
}

std::string out_file(const std::string& out_dir, const std::string& name) {
  fs::create_directories(out_dir);
  return (fs::path(out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// Shared option bundles
// ---------------------------------------------------------------------------

struct CommonOpts {
  std::string out = "treegp-out";
  uint64_t seed = 1;
  int threads = 0;
};

void add_common_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--out", o.out, "Output directory (created if absent)");
  cmd->add_option("--seed", o.seed, "Master random seed");
  cmd->add_option("--threads", o.threads, "Worker threads for Gram assembly (0 = all cores)");
}

struct DataOpts {
  std::vector<std::string> tree_files;
  std::string features_file;
  std::string targets_file;
  int per_word_slot = -1;
  bool center = true;
  int target_column = 0;
};

void add_data_flags(CLI::App* cmd, DataOpts& o, bool with_targets) {
  cmd->add_option("--trees", o.tree_files,
                  "Tree file, one bracketed tree per line (repeat per slot)");
  cmd->add_option("--features", o.features_file, "Dense feature CSV with a header row");
  if (with_targets) {
    cmd->add_option("--targets", o.targets_file, "Targets file, one row of decimals per input")
        ->required();
    cmd->add_option("--per-word", o.per_word_slot,
                    "Divide targets by the token count of this tree slot");
    cmd->add_flag("--center,!--no-center", o.center, "Mean-center targets (default on)");
  }
}

struct KernelOpts {
  std::string kernel = "sstk";  // sstk | sasstk-full | sasstk-subset
  std::string subset_symbols = "S";
  std::string alpha_mode = "free";  // free | fixed1
  std::string combine = "sum";      // sum | product
  bool normalized = true;
  std::string lambda_values = "0.4";
  std::string alpha_values = "1";
  double rbf_variance = 1.0;
  double rbf_lengthscale = 1.0;
};

void add_kernel_flags(CLI::App* cmd, KernelOpts& o, bool with_values) {
  cmd->add_option("--kernel", o.kernel, "Tree kernel: sstk | sasstk-full | sasstk-subset")
      ->check(CLI::IsMember({"sstk", "sasstk-full", "sasstk-subset"}));
  cmd->add_option("--subset-symbols", o.subset_symbols,
                  "Comma list of symbols sharing the first group (sasstk-subset)");
  cmd->add_option("--alpha", o.alpha_mode, "Alpha mode: free | fixed1")
      ->check(CLI::IsMember({"free", "fixed1"}));
  cmd->add_option("--combine", o.combine, "Combine multiple kernels: sum | product")
      ->check(CLI::IsMember({"sum", "product"}));
  cmd->add_flag("--normalize,!--no-normalize", o.normalized, "Normalize tree kernels");
  if (with_values) {
    cmd->add_option("--lambda", o.lambda_values,
                    "Decay value(s): scalar broadcast or comma list per group");
    cmd->add_option("--alpha-value", o.alpha_values,
                    "Alpha value(s): scalar broadcast or comma list per group");
    cmd->add_option("--rbf-variance", o.rbf_variance, "RBF signal variance");
    cmd->add_option("--rbf-lengthscale", o.rbf_lengthscale, "RBF lengthscale");
  }
}

struct OptOpts {
  int restarts = 10;
  int max_iters = 100;
  double grad_tol = 1e-5;
  double lml_tol = 1e-9;
  std::string grid_file;
};

void add_opt_flags(CLI::App* cmd, OptOpts& o) {
  cmd->add_option("--restarts", o.restarts, "Random restarts for the gradient optimizer");
  cmd->add_option("--max-iters", o.max_iters, "Iteration cap per restart");
  cmd->add_option("--grad-tol", o.grad_tol, "Gradient-norm convergence tolerance");
  cmd->add_option("--lml-tol", o.lml_tol, "Relative LML improvement tolerance");
  cmd->add_option("--grid", o.grid_file, "Grid file (JSON); selects grid search instead");
}

OptimizeConfig make_opt_config(const OptOpts& o, uint64_t seed) {
  OptimizeConfig cfg;
  cfg.restarts = o.restarts;
  cfg.max_iterations = o.max_iters;
  cfg.grad_tolerance = o.grad_tol;
  cfg.lml_tolerance = o.lml_tol;
  cfg.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------------------
// Kernel spec construction
// ---------------------------------------------------------------------------

TyingScheme build_scheme(const KernelOpts& o, SymbolTable& table) {
  if (o.kernel == "sstk") return TyingScheme::tied();
  if (o.kernel == "sasstk-full") return TyingScheme::per_symbol(table);
  return TyingScheme::subset(table, split_list(o.subset_symbols));
}

AlphaMode alpha_mode_of(const KernelOpts& o) {
  return o.alpha_mode == "fixed1" ? AlphaMode::kFixedAtOne : AlphaMode::kFree;
}

// One tree leaf per tree slot plus an RBF leaf when features are present,
// combined per --combine when more than one leaf exists.
KernelSpec build_spec(const KernelOpts& o, SymbolTable& table, int tree_slot_count,
                      bool has_features) {
  std::vector<KernelSpec> leaves;
  if (tree_slot_count > 0) {
    const TyingScheme scheme = build_scheme(o, table);
    for (int s = 0; s < tree_slot_count; ++s)
      leaves.push_back(KernelSpec::tree(s, scheme, alpha_mode_of(o), o.normalized));
  }
  if (has_features) leaves.push_back(KernelSpec::rbf());
  if (leaves.empty()) fail(codes::kConfig, "the kernel needs trees or features");
  if (leaves.size() == 1) return leaves[0];
  return o.combine == "product" ? KernelSpec::product(std::move(leaves))
                                : KernelSpec::sum(std::move(leaves));
}

Eigen::VectorXd theta_from_flags(const KernelSpec& spec, const KernelOpts& o) {
  Eigen::VectorXd theta(spec.param_count());
  int cursor = 0;
  for (const LeafSlice& s : leaf_slices(spec)) {
    if (s.leaf->kind == KernelSpec::Kind::kRbf) {
      theta[cursor++] = o.rbf_variance;
      theta[cursor++] = o.rbf_lengthscale;
      continue;
    }
    const int k = s.leaf->scheme.group_count();
    const auto fill = [&](const std::string& values, const std::string& flag) {
      const std::vector<double> v = parse_doubles(values, flag);
      if (v.size() != 1 && static_cast<int>(v.size()) != k)
        fail(codes::kConfig, flag + ": expected 1 or " + std::to_string(k) + " values");
      for (int g = 0; g < k; ++g) theta[cursor++] = v.size() == 1 ? v[0] : v[g];
    };
    fill(o.lambda_values, "--lambda");
    if (s.leaf->alpha_mode == AlphaMode::kFree) fill(o.alpha_values, "--alpha-value");
  }
  return theta;
}

json kernel_config_json(const KernelOpts& o) {
  return json{{"kernel", o.kernel},
              {"subset_symbols", o.subset_symbols},
              {"alpha", o.alpha_mode},
              {"combine", o.combine},
              {"normalized", o.normalized}};
}

// ---------------------------------------------------------------------------
// Grid files
// ---------------------------------------------------------------------------

GridSpec load_grid_file(const std::string& path, const KernelSpec& spec) {
  std::ifstream in(path);
  if (!in) fail(codes::kIo, "cannot open grid file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(codes::kIo, path + ": " + std::string(e.what()));
  }
  auto axis = [&](const char* key) {
    if (!j.contains(key))
      fail(codes::kConfig, path + ": grid file is missing the '" + std::string(key) + "' list");
    return j[key].get<std::vector<double>>();
  };
  GridSpec grid;
  for (ParamKind kind : spec.param_kinds()) {
    switch (kind) {
      case ParamKind::kLambda: grid.values.push_back(axis("lambda")); break;
      case ParamKind::kAlpha: grid.values.push_back(axis("alpha")); break;
      case ParamKind::kRbfVariance: grid.values.push_back(axis("rbf.variance")); break;
      case ParamKind::kRbfLengthscale: grid.values.push_back(axis("rbf.lengthscale")); break;
    }
  }
  grid.noise_values = axis("noise");
  grid.folds = j.value("folds", 3);
  return grid;
}

// ---------------------------------------------------------------------------
// Model persistence (JSON; references the training files)
// ---------------------------------------------------------------------------

json scheme_groups_json(const TyingScheme& scheme) {
  json groups = json::array();
  for (const std::string& g : scheme.group_names()) groups.push_back(g);
  return groups;
}

KernelSpec spec_from_json(const json& j, SymbolTable& table) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "sum" || type == "product") {
    std::vector<KernelSpec> children;
    for (const json& c : j.at("children")) children.push_back(spec_from_json(c, table));
    return type == "sum" ? KernelSpec::sum(std::move(children))
                         : KernelSpec::product(std::move(children));
  }
  if (type == "rbf") return KernelSpec::rbf();
  const std::string tying = j.at("tying").get<std::string>();
  TyingScheme scheme;
  if (tying == "tied")
    scheme = TyingScheme::tied();
  else if (tying == "per-symbol")
    scheme = TyingScheme::per_symbol(table);
  else
    scheme = TyingScheme::subset(table, j.at("subset_symbols").get<std::vector<std::string>>());
  if (j.contains("groups") && scheme_groups_json(scheme) != j["groups"])
    fail(codes::kConfig,
         "the reloaded symbol table does not reproduce the model's tying groups; "
         "were the training files changed?");
  const AlphaMode mode =
      j.at("alpha").get<std::string>() == "fixed1" ? AlphaMode::kFixedAtOne : AlphaMode::kFree;
  return KernelSpec::tree(j.at("slot").get<int>(), scheme, mode, j.at("normalized").get<bool>());
}

struct LoadedModel {
  GPModel model;
  std::shared_ptr<SymbolTable> table;
};

void save_model(const std::string& path, const GPModel& model, const DataOpts& data) {
  json j;
  j["version"] = kVersion;
  j["kernel"] = describe_spec(model.spec);
  j["theta_order"] = model.spec.param_names();
  j["theta_values"] =
      std::vector<double>(model.theta.data(), model.theta.data() + model.theta.size());
  j["hypers"] = named_hypers(model.spec, model.theta, model.noise_var);
  j["noise"] = model.noise_var;
  j["center"] = model.center;
  j["target_mean"] = model.target_mean;
  j["jitter"] = model.jitter;
  j["train"] = json{{"trees", data.tree_files},
                    {"features", data.features_file},
                    {"targets", data.targets_file},
                    {"target_column", data.target_column},
                    {"per_word", data.per_word_slot}};
  write_json(path, j);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(codes::kIo, "cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(codes::kIo, path + ": " + std::string(e.what()));
  }

  DataOpts data;
  data.tree_files = j.at("train").at("trees").get<std::vector<std::string>>();
  data.features_file = j.at("train").at("features").get<std::string>();
  data.targets_file = j.at("train").at("targets").get<std::string>();
  data.target_column = j.at("train").at("target_column").get<int>();
  data.per_word_slot = j.at("train").at("per_word").get<int>();

  Dataset ds = load_dataset({data.tree_files, data.features_file, data.targets_file});
  if (data.per_word_slot >= 0) apply_per_word(ds, data.per_word_slot);
  if (data.target_column < 0 || data.target_column >= ds.targets.cols())
    fail(codes::kConfig, "model's target column is out of range");

  LoadedModel out;
  out.table = ds.table;
  out.model.inputs = ds.inputs;
  out.model.targets = ds.targets.col(data.target_column);
  out.model.spec = spec_from_json(j.at("kernel"), *ds.table);
  if (out.model.spec.param_names() != j.at("theta_order").get<std::vector<std::string>>())
    fail(codes::kConfig, "model hyperparameter layout does not match the reloaded kernel");
  const auto values = j.at("theta_values").get<std::vector<double>>();
  out.model.theta = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
  out.model.noise_var = j.at("noise").get<double>();
  out.model.center = j.at("center").get<bool>();
  return out;
}

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

struct KernelCmd {
  CommonOpts common;
  DataOpts data;
  KernelOpts kernel;
  bool grads = false;
};

int cmd_kernel(const KernelCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  if (o.data.tree_files.size() != 1)
    fail(codes::kConfig, "kernel expects exactly one --trees file");
  auto table = std::make_shared<SymbolTable>();
  InputSet inputs = load_inputs(o.data.tree_files, "", *table);
  inputs.table = table;

  const KernelSpec spec = build_spec(o.kernel, *table, 1, false);
  const Eigen::VectorXd theta = theta_from_flags(spec, o.kernel);
  const GramResult gram = gram_matrix(inputs, spec, theta, o.grads, o.common.threads);

  const int n = inputs.rows();
  auto write_matrix = [&](const std::string& name, const Eigen::MatrixXd& m) {
    CsvWriter csv(out_file(o.common.out, name));
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(n);
      for (int j = 0; j < n; ++j) row[j] = m(i, j);
      csv.row(row);
    }
  };
  write_matrix("gram.csv", gram.K);
  const auto names = spec.param_names();
  if (o.grads)
    for (size_t p = 0; p < gram.dK.size(); ++p)
      write_matrix("gram.grad." + names[p] + ".csv", gram.dK[p]);

  json report = base_report("kernel", json{{"trees", o.data.tree_files[0]},
                                           {"kernel", kernel_config_json(o.kernel)},
                                           {"hypers", named_hypers(spec, theta, 0.0)},
                                           {"grads", o.grads},
                                           {"seed", o.common.seed}});
  report["results"] = json{{"rows", n}, {"params", names}};
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmd {
  CommonOpts common;
  DataOpts data;
  KernelOpts kernel;
  OptOpts opt;
};

json lml_terms_json(const GPModel& model) {
  const LmlTerms t = log_marginal_likelihood(model);
  return json{{"total", t.total},
              {"data_fit", t.data_fit},
              {"complexity", t.complexity},
              {"constant", t.constant}};
}

int cmd_train(const TrainCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Dataset ds = load_dataset({o.data.tree_files, o.data.features_file, o.data.targets_file});
  if (o.data.per_word_slot >= 0) apply_per_word(ds, o.data.per_word_slot);
  if (o.data.target_column < 0 || o.data.target_column >= ds.targets.cols())
    fail(codes::kConfig, "--target-column out of range");

  GPModel model;
  model.inputs = ds.inputs;
  model.targets = ds.targets.col(o.data.target_column);
  model.spec = build_spec(o.kernel, *ds.table, static_cast<int>(ds.inputs.tree_slots.size()),
                          ds.inputs.dense.cols() > 0);
  model.theta = model.spec.default_theta();
  model.threads = o.common.threads;
  model.center = o.data.center;

  json report = base_report("train", json{{"trees", o.data.tree_files},
                                          {"features", o.data.features_file},
                                          {"targets", o.data.targets_file},
                                          {"target_column", o.data.target_column},
                                          {"per_word", o.data.per_word_slot},
                                          {"center", o.data.center},
                                          {"kernel", kernel_config_json(o.kernel)},
                                          {"seed", o.common.seed},
                                          {"restarts", o.opt.restarts},
                                          {"max_iters", o.opt.max_iters},
                                          {"grid", o.opt.grid_file}});

  if (!o.opt.grid_file.empty()) {
    const GridSpec grid = load_grid_file(o.opt.grid_file, model.spec);
    const GridResult res = grid_search(model, grid, o.common.seed);
    model.theta = res.theta;
    model.noise_var = res.noise_var;
    fit(model);
    report["results"] = json{{"method", "grid"},
                             {"grid_points", res.evaluations.size()},
                             {"cv_rmse", res.mean_rmse},
                             {"hypers", named_hypers(model.spec, model.theta, model.noise_var)},
                             {"lml", lml_terms_json(model)},
                             {"jitter", model.jitter}};
  } else {
    const OptimizeResult res = optimize(model, make_opt_config(o.opt, o.common.seed));
    model.theta = res.theta;
    model.noise_var = res.noise_var;
    fit(model);

    CsvWriter trace(out_file(o.common.out, "trace.csv"));
    trace.row(std::vector<std::string>{"restart", "iteration", "lml", "grad_norm", "seconds"});
    for (size_t r = 0; r < res.trace.restarts.size(); ++r)
      for (const OptIterRecord& it : res.trace.restarts[r].iterations)
        trace.row(std::vector<double>{static_cast<double>(r), static_cast<double>(it.iteration),
                                      it.lml, it.grad_norm, it.seconds});

    json restarts = json::array();
    for (const auto& r : res.trace.restarts)
      restarts.push_back(json{{"final_lml", r.final_lml},
                              {"failed", r.failed},
                              {"iterations", r.iterations.size()}});
    report["results"] = json{{"method", "gradient"},
                             {"hypers", named_hypers(model.spec, model.theta, model.noise_var)},
                             {"lml", lml_terms_json(model)},
                             {"chosen_restart", res.trace.chosen},
                             {"restarts", restarts},
                             {"jitter", model.jitter}};
  }

  save_model(out_file(o.common.out, "model.json"), model, o.data);
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictCmd {
  CommonOpts common;
  DataOpts data;  // test-side trees/features
  std::string model_file;
};

int cmd_predict(const PredictCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  if (o.data.tree_files.empty() && o.data.features_file.empty())
    fail(codes::kConfig, "predict needs --trees and/or --features for the test inputs");
  LoadedModel loaded = load_model(o.model_file);
  GPModel& model = loaded.model;
  model.threads = o.common.threads;
  fit(model);

  const InputSet test = load_inputs(o.data.tree_files, o.data.features_file, *loaded.table);
  const Prediction pred = predict(model, test);

  CsvWriter csv(out_file(o.common.out, "predictions.csv"));
  csv.row(std::vector<std::string>{"mean", "variance"});
  for (int i = 0; i < pred.mean.size(); ++i)
    csv.row(std::vector<double>{pred.mean[i], pred.variance[i]});

  json report = base_report("predict", json{{"model", o.model_file},
                                            {"trees", o.data.tree_files},
                                            {"features", o.data.features_file},
                                            {"seed", o.common.seed}});
  report["results"] = json{{"rows", pred.mean.size()}, {"jitter", model.jitter}};
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

// ---------------------------------------------------------------------------
// crossval
// ---------------------------------------------------------------------------

struct CrossvalCmd {
  CommonOpts common;
  DataOpts data;
  KernelOpts kernel;
  OptOpts opt;
  int folds = 5;
};

int cmd_crossval(const CrossvalCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Dataset ds = load_dataset({o.data.tree_files, o.data.features_file, o.data.targets_file});
  if (o.data.per_word_slot >= 0) apply_per_word(ds, o.data.per_word_slot);
  const int n = ds.inputs.rows();
  const int targets = static_cast<int>(ds.targets.cols());
  const std::vector<int> fold_of = fold_assignment(n, o.folds, o.common.seed);
  const Rng master(o.common.seed);

  const KernelSpec spec = build_spec(o.kernel, *ds.table,
                                     static_cast<int>(ds.inputs.tree_slots.size()),
                                     ds.inputs.dense.cols() > 0);

  CsvWriter pred_csv(out_file(o.common.out, "predictions.csv"));
  pred_csv.row(std::vector<std::string>{"row", "fold", "target", "actual", "mean", "variance"});

  json fold_metrics = json::array();
  // concatenation of held-out predictions across folds and target columns
  std::vector<double> all_pred, all_actual, all_baseline;
  double fit_seconds = 0.0;

  for (int c = 0; c < targets; ++c) {
    Eigen::VectorXd concat_pred(n), concat_actual(n), concat_var(n);
    std::vector<int> concat_fold(n);
    for (int f = 0; f < o.folds; ++f) {
      std::vector<int> train_rows, val_rows;
      for (int i = 0; i < n; ++i) (fold_of[i] == f ? val_rows : train_rows).push_back(i);

      GPModel model;
      model.inputs = ds.inputs.subset(train_rows);
      model.targets.resize(train_rows.size());
      for (size_t i = 0; i < train_rows.size(); ++i)
        model.targets[i] = ds.targets(train_rows[i], c);
      model.spec = spec;
      model.theta = spec.default_theta();
      model.threads = o.common.threads;
      model.center = o.data.center;

      const auto fit_t0 = std::chrono::steady_clock::now();
      const uint64_t fold_seed = master.child(1 + c * 1000 + f).base_seed();
      if (!o.opt.grid_file.empty()) {
        const GridSpec grid = load_grid_file(o.opt.grid_file, spec);
        const GridResult res = grid_search(model, grid, fold_seed);
        model.theta = res.theta;
        model.noise_var = res.noise_var;
      } else {
        const OptimizeResult res = optimize(model, make_opt_config(o.opt, fold_seed));
        model.theta = res.theta;
        model.noise_var = res.noise_var;
      }
      fit(model);
      fit_seconds += elapsed(fit_t0);

      const Prediction pred = predict(model, ds.inputs.subset(val_rows));
      Eigen::VectorXd actual(val_rows.size());
      for (size_t i = 0; i < val_rows.size(); ++i) actual[i] = ds.targets(val_rows[i], c);

      const double train_mean = model.targets.mean();
      for (size_t i = 0; i < val_rows.size(); ++i) {
        concat_pred[val_rows[i]] = pred.mean[i];
        concat_actual[val_rows[i]] = actual[i];
        concat_var[val_rows[i]] = pred.variance[i];
        concat_fold[val_rows[i]] = f;
        all_pred.push_back(pred.mean[i]);
        all_actual.push_back(actual[i]);
        all_baseline.push_back(train_mean);
      }
      fold_metrics.push_back(json{{"target", c},
                                  {"fold", f},
                                  {"rmse", rmse(pred.mean, actual)},
                                  {"mae", mae(pred.mean, actual)},
                                  {"jitter", model.jitter},
                                  {"hypers", named_hypers(spec, model.theta, model.noise_var)}});
    }
    for (int i = 0; i < n; ++i)
      pred_csv.row(std::vector<double>{static_cast<double>(i),
                                       static_cast<double>(concat_fold[i]),
                                       static_cast<double>(c), concat_actual[i], concat_pred[i],
                                       concat_var[i]});
  }

  const Eigen::Map<const Eigen::VectorXd> pred_all(all_pred.data(), all_pred.size());
  const Eigen::Map<const Eigen::VectorXd> actual_all(all_actual.data(), all_actual.size());
  const Eigen::Map<const Eigen::VectorXd> baseline_all(all_baseline.data(), all_baseline.size());

  json report = base_report("crossval", json{{"trees", o.data.tree_files},
                                             {"features", o.data.features_file},
                                             {"targets", o.data.targets_file},
                                             {"per_word", o.data.per_word_slot},
                                             {"center", o.data.center},
                                             {"kernel", kernel_config_json(o.kernel)},
                                             {"folds", o.folds},
                                             {"seed", o.common.seed},
                                             {"restarts", o.opt.restarts},
                                             {"max_iters", o.opt.max_iters},
                                             {"grid", o.opt.grid_file}});
  report["results"]["folds"] = std::move(fold_metrics);
  report["results"]["aggregate"] = json{{"rmse", rmse(pred_all, actual_all)},
                                        {"mae", mae(pred_all, actual_all)},
                                        {"pearson", pearson(pred_all, actual_all)},
                                        {"baseline_rmse", rmse(baseline_all, actual_all)},
                                        {"baseline_mae", mae(baseline_all, actual_all)}};
  report["timings"]["fit_seconds"] = fit_seconds;
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

// ---------------------------------------------------------------------------
// synth / recover / compare / benchmark
// ---------------------------------------------------------------------------

struct PoolOpts {
  std::string pool_file;  // use this tree file instead of generating
  int count = 1000;
  int vocabulary = 40;
  std::string symbols = "S,NP,VP,PP,DT,NN,VB,JJ,IN,RB";
  int max_depth = 6;
};

void add_pool_flags(CLI::App* cmd, PoolOpts& o) {
  cmd->add_option("--pool", o.pool_file, "Tree file to use as the pool (else generated)");
  cmd->add_option("--count", o.count, "Generated pool size");
  cmd->add_option("--vocab", o.vocabulary, "Generated vocabulary size");
  cmd->add_option("--symbols", o.symbols, "Generated non-terminal symbols (comma list)");
  cmd->add_option("--max-depth", o.max_depth, "Generated tree depth cap");
}

InputSet make_pool(const PoolOpts& o, uint64_t seed, json* pool_config) {
  auto table = std::make_shared<SymbolTable>();
  InputSet pool;
  pool.table = table;
  if (!o.pool_file.empty()) {
    pool.tree_slots.push_back(load_tree_file(o.pool_file, *table));
    *pool_config = json{{"pool", o.pool_file}};
  } else {
    TreebankConfig cfg;
    cfg.count = o.count;
    cfg.vocabulary = o.vocabulary;
    cfg.symbols = split_list(o.symbols);
    cfg.max_depth = o.max_depth;
    cfg.seed = Rng(seed).child(100).base_seed();
    pool.tree_slots.push_back(generate_treebank(cfg, *table));
    *pool_config = json{{"pool", "generated"},
                        {"count", o.count},
                        {"vocab", o.vocabulary},
                        {"symbols", o.symbols},
                        {"max_depth", o.max_depth}};
  }
  return pool;
}

struct SynthCmd {
  CommonOpts common;
  PoolOpts pool;
  KernelOpts kernel;
  double noise = 0.01;
};

int cmd_synth(const SynthCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  json pool_config;
  const InputSet pool = make_pool(o.pool, o.common.seed, &pool_config);
  SymbolTable& table = const_cast<SymbolTable&>(*pool.table);

  const KernelSpec spec = build_spec(o.kernel, table, 1, false);
  const Eigen::VectorXd theta = theta_from_flags(spec, o.kernel);
  const Eigen::VectorXd y =
      sample_prior_targets(pool, spec, theta, o.noise,
                           Rng(o.common.seed).child(101).base_seed(), o.common.threads);

  {
    std::ofstream trees(out_file(o.common.out, "trees.txt"));
    if (!trees) fail(codes::kIo, "cannot write trees.txt");
    for (const ParsedTree& t : pool.tree_slots[0]) trees << t.pretty() << '\n';
  }
  {
    CsvWriter targets(out_file(o.common.out, "targets.csv"));
    for (int i = 0; i < y.size(); ++i) targets.row(std::vector<double>{y[i]});
  }

  json report = base_report("synth", json{{"pool", pool_config},
                                          {"kernel", kernel_config_json(o.kernel)},
                                          {"hypers", named_hypers(spec, theta, o.noise)},
                                          {"seed", o.common.seed}});
  report["results"] = json{{"rows", y.size()}};
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

struct HarnessOpts {
  int test_size = 200;
  std::string sizes = "50,200,400";
  int repetitions = 5;
  int restarts = 5;
  int max_iters = 100;
};

void add_harness_flags(CLI::App* cmd, HarnessOpts& o) {
  cmd->add_option("--test-size", o.test_size, "Held-out test rows");
  cmd->add_option("--sizes", o.sizes, "Training sizes (comma list)");
  cmd->add_option("--reps", o.repetitions, "Repetitions per size");
  cmd->add_option("--restarts", o.restarts, "Optimizer restarts");
  cmd->add_option("--max-iters", o.max_iters, "Optimizer iteration cap");
}

SynthConfig make_synth_config(const HarnessOpts& o, const CommonOpts& common) {
  SynthConfig cfg;
  cfg.test_size = o.test_size;
  cfg.train_sizes = parse_ints(o.sizes, "--sizes");
  cfg.repetitions = o.repetitions;
  cfg.seed = common.seed;
  cfg.opt.restarts = o.restarts;
  cfg.opt.max_iterations = o.max_iters;
  cfg.threads = common.threads;
  return cfg;
}

struct RecoverCmd {
  CommonOpts common;
  PoolOpts pool;
  KernelOpts kernel;  // generating and fitted structure
  HarnessOpts harness;
  double noise = 0.01;
};

int cmd_recover(const RecoverCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  json pool_config;
  const InputSet pool = make_pool(o.pool, o.common.seed, &pool_config);
  SymbolTable& table = const_cast<SymbolTable&>(*pool.table);

  const KernelSpec spec = build_spec(o.kernel, table, 1, false);
  const Eigen::VectorXd gen_theta = theta_from_flags(spec, o.kernel);
  const SynthConfig cfg = make_synth_config(o.harness, o.common);

  const RecoveryReport rep = run_recovery(pool, spec, gen_theta, o.noise, spec, cfg);

  CsvWriter rows(out_file(o.common.out, "rows.csv"));
  {
    std::vector<std::string> header = {"size", "rep"};
    for (const std::string& p : rep.param_names) header.push_back(p);
    header.push_back("lml");
    header.push_back("rmse");
    header.push_back("jitter");
    header.push_back("seconds");
    rows.row(header);
  }
  for (const RecoveryRecord& r : rep.records) {
    std::vector<double> row = {static_cast<double>(r.size), static_cast<double>(r.rep)};
    for (int j = 0; j < r.theta.size(); ++j) row.push_back(r.theta[j]);
    row.push_back(r.noise_var);
    row.push_back(r.lml);
    row.push_back(r.test_rmse);
    row.push_back(r.jitter);
    row.push_back(r.seconds);
    rows.row(row);
  }

  json summaries = json::array();
  for (const SizeSummary& s : rep.summaries) {
    json per_param = json::object();
    for (size_t j = 0; j < rep.param_names.size(); ++j)
      per_param[rep.param_names[j]] = json{{"median_log10", s.median_log10[j]},
                                           {"q1_log10", s.q1_log10[j]},
                                           {"q3_log10", s.q3_log10[j]}};
    summaries.push_back(
        json{{"size", s.size}, {"hypers_log10", per_param}, {"median_rmse", s.median_rmse}});
  }

  json report = base_report("recover", json{{"pool", pool_config},
                                            {"kernel", kernel_config_json(o.kernel)},
                                            {"generating", named_hypers(spec, gen_theta, o.noise)},
                                            {"test_size", o.harness.test_size},
                                            {"sizes", o.harness.sizes},
                                            {"reps", o.harness.repetitions},
                                            {"restarts", o.harness.restarts},
                                            {"max_iters", o.harness.max_iters},
                                            {"seed", o.common.seed}});
  report["results"]["summaries"] = std::move(summaries);
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

struct CompareCmd {
  CommonOpts common;
  PoolOpts pool;
  KernelOpts kernel;  // generating kernel (sasstk-subset)
  HarnessOpts harness;
  double noise = 0.01;
};

int cmd_compare(const CompareCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  json pool_config;
  const InputSet pool = make_pool(o.pool, o.common.seed, &pool_config);
  SymbolTable& table = const_cast<SymbolTable&>(*pool.table);

  const KernelSpec gen_spec = build_spec(o.kernel, table, 1, false);
  const Eigen::VectorXd gen_theta = theta_from_flags(gen_spec, o.kernel);

  KernelOpts sstk = o.kernel;
  sstk.kernel = "sstk";
  const std::vector<KernelSpec> families = {gen_spec, build_spec(sstk, table, 1, false)};
  const std::vector<std::string> family_names = {"sasstk_s", "sstk"};

  const SynthConfig cfg = make_synth_config(o.harness, o.common);
  const ComparisonReport rep =
      run_model_comparison(pool, gen_spec, gen_theta, o.noise, families, family_names, cfg);

  CsvWriter rows(out_file(o.common.out, "rows.csv"));
  rows.row(
      std::vector<std::string>{"size", "rep", "family", "rmse", "lml", "jitter", "seconds"});
  for (const ComparisonRecord& r : rep.records)
    rows.row(std::vector<std::string>{std::to_string(r.size), std::to_string(r.rep),
                                      family_names[r.family], format_double(r.test_rmse),
                                      format_double(r.lml), format_double(r.jitter),
                                      format_double(r.seconds)});

  // per (size, family) mean test RMSE
  json means = json::array();
  for (int size : cfg.train_sizes) {
    json row{{"size", size}};
    for (size_t fam = 0; fam < family_names.size(); ++fam) {
      double total = 0.0;
      int count = 0;
      for (const ComparisonRecord& r : rep.records)
        if (r.size == size && r.family == static_cast<int>(fam)) {
          total += r.test_rmse;
          ++count;
        }
      row["mean_rmse_" + family_names[fam]] = total / count;
    }
    means.push_back(std::move(row));
  }

  json report = base_report("compare", json{{"pool", pool_config},
                                            {"kernel", kernel_config_json(o.kernel)},
                                            {"generating",
                                             named_hypers(gen_spec, gen_theta, o.noise)},
                                            {"test_size", o.harness.test_size},
                                            {"sizes", o.harness.sizes},
                                            {"reps", o.harness.repetitions},
                                            {"restarts", o.harness.restarts},
                                            {"max_iters", o.harness.max_iters},
                                            {"seed", o.common.seed}});
  report["results"]["mean_rmse"] = std::move(means);
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

struct BenchmarkCmd {
  CommonOpts common;
  PoolOpts pool;
  KernelOpts kernel;
  double noise = 0.01;
  std::string budgets = "0,2,5,10,20,40";
  std::string grid_sizes = "2,3,4,6";
  int train_size = 200;
  int test_size = 200;
  int repetitions = 5;
  int restarts = 5;
};

int cmd_benchmark(const BenchmarkCmd& o) {
  const auto t0 = std::chrono::steady_clock::now();
  json pool_config;
  const InputSet pool = make_pool(o.pool, o.common.seed, &pool_config);
  SymbolTable& table = const_cast<SymbolTable&>(*pool.table);

  const KernelSpec spec = build_spec(o.kernel, table, 1, false);
  const Eigen::VectorXd gen_theta = theta_from_flags(spec, o.kernel);

  SynthConfig cfg;
  cfg.test_size = o.test_size;
  cfg.repetitions = o.repetitions;
  cfg.seed = o.common.seed;
  cfg.opt.restarts = o.restarts;
  cfg.threads = 1;  // single-core timing

  const BenchmarkReport rep = run_time_benchmark(
      pool, spec, gen_theta, o.noise, spec, parse_ints(o.budgets, "--budgets"),
      parse_ints(o.grid_sizes, "--grid-sizes"), o.train_size, cfg);

  CsvWriter rows(out_file(o.common.out, "rows.csv"));
  rows.row(std::vector<std::string>{"method", "setting", "rep", "seconds", "rmse"});
  for (const BenchmarkRow& r : rep.rows)
    rows.row(std::vector<std::string>{r.method, format_double(r.setting), std::to_string(r.rep),
                                      format_double(r.seconds), format_double(r.test_rmse)});

  // per (method, setting) means plus the running best, in emission order
  CsvWriter agg(out_file(o.common.out, "aggregate.csv"));
  agg.row(std::vector<std::string>{"method", "setting", "mean_seconds", "mean_rmse", "best_rmse"});
  json aggregates = json::array();
  for (const std::string& method : {std::string("gradient"), std::string("grid")}) {
    std::vector<double> settings;
    for (const BenchmarkRow& r : rep.rows)
      if (r.method == method &&
          std::find(settings.begin(), settings.end(), r.setting) == settings.end())
        settings.push_back(r.setting);
    double best = std::numeric_limits<double>::infinity();
    for (double setting : settings) {
      double secs = 0.0, err = 0.0;
      int count = 0;
      for (const BenchmarkRow& r : rep.rows)
        if (r.method == method && r.setting == setting) {
          secs += r.seconds;
          err += r.test_rmse;
          ++count;
        }
      best = std::min(best, err / count);
      agg.row(std::vector<std::string>{method, format_double(setting),
                                       format_double(secs / count), format_double(err / count),
                                       format_double(best)});
      aggregates.push_back(json{{"method", method},
                                {"setting", setting},
                                {"mean_seconds", secs / count},
                                {"mean_rmse", err / count},
                                {"best_rmse", best}});
    }
  }

  json report = base_report("benchmark", json{{"pool", pool_config},
                                              {"kernel", kernel_config_json(o.kernel)},
                                              {"generating",
                                               named_hypers(spec, gen_theta, o.noise)},
                                              {"budgets", o.budgets},
                                              {"grid_sizes", o.grid_sizes},
                                              {"train_size", o.train_size},
                                              {"test_size", o.test_size},
                                              {"reps", o.repetitions},
                                              {"restarts", o.restarts},
                                              {"seed", o.common.seed}});
  report["results"]["target_std"] = rep.target_std;
  report["results"]["aggregates"] = std::move(aggregates);
  report["timings"]["total_seconds"] = elapsed(t0);
  write_json(out_file(o.common.out, "report.json"), report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"treegp — Gaussian process regression with subset-tree kernels"};
  app.require_subcommand(1);

  KernelCmd kernel_cmd;
  auto* kernel = app.add_subcommand("kernel", "Write the Gram matrix of a tree file as CSV");
  add_common_flags(kernel, kernel_cmd.common);
  add_data_flags(kernel, kernel_cmd.data, false);
  add_kernel_flags(kernel, kernel_cmd.kernel, true);
  kernel->add_flag("--grads", kernel_cmd.grads, "Also write one gradient CSV per hyperparameter");

  TrainCmd train_cmd;
  auto* train = app.add_subcommand("train", "Fit a GP by marginal-likelihood optimization");
  add_common_flags(train, train_cmd.common);
  add_data_flags(train, train_cmd.data, true);
  train->add_option("--target-column", train_cmd.data.target_column, "Target column to fit");
  add_kernel_flags(train, train_cmd.kernel, false);
  add_opt_flags(train, train_cmd.opt);

  PredictCmd predict_cmd;
  auto* predict_sub = app.add_subcommand("predict", "Predict mean and variance for new inputs");
  add_common_flags(predict_sub, predict_cmd.common);
  add_data_flags(predict_sub, predict_cmd.data, false);
  predict_sub->add_option("--model", predict_cmd.model_file, "Model file written by train")
      ->required();

  CrossvalCmd crossval_cmd;
  auto* crossval = app.add_subcommand("crossval", "Seeded k-fold cross-validation");
  add_common_flags(crossval, crossval_cmd.common);
  add_data_flags(crossval, crossval_cmd.data, true);
  add_kernel_flags(crossval, crossval_cmd.kernel, false);
  add_opt_flags(crossval, crossval_cmd.opt);
  crossval->add_option("--folds", crossval_cmd.folds, "Cross-validation folds");

  SynthCmd synth_cmd;
  synth_cmd.kernel.normalized = false;
  synth_cmd.kernel.lambda_values = "0.001";
  synth_cmd.kernel.alpha_values = "1";
  auto* synth = app.add_subcommand("synth", "Generate a treebank and sample prior targets");
  add_common_flags(synth, synth_cmd.common);
  add_pool_flags(synth, synth_cmd.pool);
  add_kernel_flags(synth, synth_cmd.kernel, true);
  synth->add_option("--noise", synth_cmd.noise, "Observation noise variance");

  RecoverCmd recover_cmd;
  recover_cmd.kernel.normalized = false;
  recover_cmd.kernel.lambda_values = "0.001";
  recover_cmd.kernel.alpha_values = "1";
  auto* recover = app.add_subcommand("recover", "Hyperparameter recovery from prior samples");
  add_common_flags(recover, recover_cmd.common);
  add_pool_flags(recover, recover_cmd.pool);
  add_kernel_flags(recover, recover_cmd.kernel, true);
  recover->add_option("--noise", recover_cmd.noise, "Generating noise variance");
  add_harness_flags(recover, recover_cmd.harness);

  CompareCmd compare_cmd;
  compare_cmd.kernel.kernel = "sasstk-subset";
  compare_cmd.kernel.normalized = false;
  compare_cmd.kernel.lambda_values = "0.5,0.001";
  compare_cmd.kernel.alpha_values = "1,0.1";
  auto* compare = app.add_subcommand(
      "compare", "Fit symbol-aware and tied kernels on symbol-aware prior samples");
  add_common_flags(compare, compare_cmd.common);
  add_pool_flags(compare, compare_cmd.pool);
  add_kernel_flags(compare, compare_cmd.kernel, true);
  compare->add_option("--noise", compare_cmd.noise, "Generating noise variance");
  add_harness_flags(compare, compare_cmd.harness);

  BenchmarkCmd benchmark_cmd;
  benchmark_cmd.kernel.normalized = false;
  benchmark_cmd.kernel.lambda_values = "0.001";
  benchmark_cmd.kernel.alpha_values = "1";
  auto* benchmark =
      app.add_subcommand("benchmark", "Wall-clock versus error: gradient ascent against grids");
  add_common_flags(benchmark, benchmark_cmd.common);
  add_pool_flags(benchmark, benchmark_cmd.pool);
  add_kernel_flags(benchmark, benchmark_cmd.kernel, true);
  benchmark->add_option("--noise", benchmark_cmd.noise, "Generating noise variance");
  benchmark->add_option("--budgets", benchmark_cmd.budgets, "Iteration budgets (comma list)");
  benchmark->add_option("--grid-sizes", benchmark_cmd.grid_sizes,
                        "Grid granularities (comma list)");
  benchmark->add_option("--train-size", benchmark_cmd.train_size, "Training rows per run");
  benchmark->add_option("--test-size", benchmark_cmd.test_size, "Held-out test rows");
  benchmark->add_option("--reps", benchmark_cmd.repetitions, "Runs per setting");
  benchmark->add_option("--restarts", benchmark_cmd.restarts, "Optimizer restarts");

  try {
    app.parse(argc, argv);
    if (kernel->parsed()) return cmd_kernel(kernel_cmd);
    if (train->parsed()) return cmd_train(train_cmd);
    if (predict_sub->parsed()) return cmd_predict(predict_cmd);
    if (crossval->parsed()) return cmd_crossval(crossval_cmd);
    if (synth->parsed()) return cmd_synth(synth_cmd);
    if (recover->parsed()) return cmd_recover(recover_cmd);
    if (compare->parsed()) return cmd_compare(compare_cmd);
    if (benchmark->parsed()) return cmd_benchmark(benchmark_cmd);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "ERROR " << e.code() << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR Internal: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
