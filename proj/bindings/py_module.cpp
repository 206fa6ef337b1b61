#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "treegp/errors.hpp"
#include "treegp/gp.hpp"
#include "treegp/kernels.hpp"
#include "treegp/optimize.hpp"
#include "treegp/synth.hpp"
#include "treegp/tree.hpp"
#include "treegp/version.hpp"

namespace py = pybind11;
using namespace treegp;

namespace {

TreeKernelHypers make_hypers(const Eigen::VectorXd& lambda, const Eigen::VectorXd& alpha) {
  TreeKernelHypers h;
  h.lambda = lambda;
  h.alpha = alpha;
  return h;
}

AlphaMode parse_alpha_mode(const std::string& mode) {
  if (mode == "free") return AlphaMode::kFree;
  if (mode == "fixed1") return AlphaMode::kFixedAtOne;
  fail(codes::kConfig, "alpha mode must be 'free' or 'fixed1'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gaussian process regression with subset-tree kernels";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "TreegpError");

  py::class_<SymbolTable, std::shared_ptr<SymbolTable>>(m, "SymbolTable")
      .def(py::init<>())
      .def("symbol_count", &SymbolTable::symbol_count)
      .def("symbol_text", &SymbolTable::symbol_text)
      .def("find_symbol", [](const SymbolTable& t, const std::string& s) {
        return t.find_symbol(s);
      });

  py::class_<ParsedTree>(m, "ParsedTree")
      .def("pretty", &ParsedTree::pretty)
      .def_property_readonly("node_count", &ParsedTree::node_count)
      .def_property_readonly("token_count", &ParsedTree::token_count)
      .def("__repr__", [](const ParsedTree& t) { return "<ParsedTree " + t.pretty() + ">"; });

  m.def("parse_bracketed",
        [](const std::string& text, SymbolTable& table) { return parse_bracketed(text, table); },
        py::arg("text"), py::arg("table"), py::keep_alive<0, 2>(),
        "Parse one bracketed constituency tree");
  m.def("load_trees",
        [](const std::string& path, SymbolTable& table) { return load_tree_file(path, table); },
        py::arg("path"), py::arg("table"), py::keep_alive<0, 2>(),
        "Load a tree file (one tree per non-empty line)");
  m.def("matching_node_pairs", &matching_node_pairs, py::arg("t1"), py::arg("t2"),
        "Node pairs with equal productions, in deterministic order");

  py::class_<TyingScheme>(m, "TyingScheme")
      .def_static("tied", &TyingScheme::tied)
      .def_static("per_symbol", &TyingScheme::per_symbol, py::arg("table"))
      .def_static("subset",
                  [](SymbolTable& table, const std::vector<std::string>& symbols) {
                    return TyingScheme::subset(table, symbols);
                  },
                  py::arg("table"), py::arg("symbols"))
      .def_property_readonly("group_count", &TyingScheme::group_count)
      .def_property_readonly("group_names", &TyingScheme::group_names);

  m.def("tree_kernel",
        [](const ParsedTree& t1, const ParsedTree& t2, const Eigen::VectorXd& lambda,
           const Eigen::VectorXd& alpha, const TyingScheme& scheme) {
          const TreeKernelResult r = sstk_with_grads(t1, t2, make_hypers(lambda, alpha), scheme);
          return py::make_tuple(r.value, r.d_lambda, r.d_alpha);
        },
        py::arg("t1"), py::arg("t2"), py::arg("lambda"), py::arg("alpha"),
        py::arg("scheme") = TyingScheme::tied(),
        "Unnormalized subset-tree kernel: (value, d_lambda, d_alpha)");

  m.def("brute_force_kernel",
        [](const ParsedTree& t1, const ParsedTree& t2, const Eigen::VectorXd& lambda,
           const Eigen::VectorXd& alpha, const TyingScheme& scheme, int max_nodes) {
          return brute_force_kernel(t1, t2, make_hypers(lambda, alpha), scheme, max_nodes);
        },
        py::arg("t1"), py::arg("t2"), py::arg("lambda"), py::arg("alpha"),
        py::arg("scheme") = TyingScheme::tied(), py::arg("max_nodes") = 12,
        "Fragment-enumeration evaluation of the same kernel (testing oracle)");

  py::class_<KernelSpec>(m, "KernelSpec")
      .def_property_readonly("param_count", &KernelSpec::param_count)
      .def_property_readonly("param_names", &KernelSpec::param_names)
      .def("default_theta", &KernelSpec::default_theta);

  m.def("tree_spec",
        [](int slot, const TyingScheme& scheme, const std::string& alpha, bool normalized) {
          return KernelSpec::tree(slot, scheme, parse_alpha_mode(alpha), normalized);
        },
        py::arg("slot") = 0, py::arg("scheme") = TyingScheme::tied(),
        py::arg("alpha") = "free", py::arg("normalized") = true);
  m.def("rbf_spec", &KernelSpec::rbf);
  m.def("sum_spec", &KernelSpec::sum, py::arg("children"));
  m.def("product_spec", &KernelSpec::product, py::arg("children"));

  py::class_<InputSet>(m, "InputSet")
      .def(py::init([](std::vector<std::vector<ParsedTree>> tree_slots, Eigen::MatrixXd dense,
                       std::shared_ptr<SymbolTable> table) {
             InputSet in;
             in.tree_slots = std::move(tree_slots);
             in.dense = std::move(dense);
             // shared ownership keeps the interned symbols alive with the rows
             if (!table && !in.tree_slots.empty() && !in.tree_slots[0].empty())
               fail(codes::kConfig, "InputSet with trees needs its symbol table");
             in.table = std::move(table);
             return in;
           }),
           py::arg("tree_slots") = std::vector<std::vector<ParsedTree>>{},
           py::arg("dense") = Eigen::MatrixXd(0, 0),
           py::arg("table") = std::shared_ptr<SymbolTable>())
      .def_property_readonly("rows", &InputSet::rows);

  m.def("gram_matrix",
        [](const InputSet& inputs, const KernelSpec& spec, const Eigen::VectorXd& theta,
           bool grads, int threads) {
          const GramResult g = gram_matrix(inputs, spec, theta, grads, threads);
          return py::make_tuple(g.K, g.dK);
        },
        py::arg("inputs"), py::arg("spec"), py::arg("theta"), py::arg("grads") = false,
        py::arg("threads") = 0, "Gram matrix and one gradient matrix per hyperparameter");

  py::class_<LmlTerms>(m, "LmlTerms")
      .def_readonly("total", &LmlTerms::total)
      .def_readonly("data_fit", &LmlTerms::data_fit)
      .def_readonly("complexity", &LmlTerms::complexity)
      .def_readonly("constant", &LmlTerms::constant);

  py::class_<GPModel>(m, "GPModel")
      .def(py::init([](InputSet inputs, Eigen::VectorXd targets, KernelSpec spec,
                       Eigen::VectorXd theta, double noise_var, int threads) {
             GPModel model;
             model.inputs = std::move(inputs);
             model.targets = std::move(targets);
             model.spec = std::move(spec);
             model.theta = std::move(theta);
             model.noise_var = noise_var;
             model.threads = threads;
             return model;
           }),
           py::arg("inputs"), py::arg("targets"), py::arg("spec"), py::arg("theta"),
           py::arg("noise_var") = 0.1, py::arg("threads") = 0)
      .def_readwrite("theta", &GPModel::theta)
      .def_readwrite("noise_var", &GPModel::noise_var)
      .def_readonly("jitter", &GPModel::jitter)
      .def("fit", [](GPModel& m, bool with_grads) { fit(m, with_grads); },
           py::arg("with_grads") = false)
      .def("log_marginal_likelihood", &log_marginal_likelihood)
      .def("lml_gradient", &lml_gradient,
           "Gradient over (theta, noise); requires fit(with_grads=True)")
      .def("predict",
           [](const GPModel& m, const InputSet& test) {
             const Prediction p = predict(m, test);
             return py::make_tuple(p.mean, p.variance);
           },
           py::arg("test_inputs"))
      .def("optimize",
           [](GPModel& m, int restarts, int max_iterations, uint64_t seed) {
             OptimizeConfig cfg;
             cfg.restarts = restarts;
             cfg.max_iterations = max_iterations;
             cfg.seed = seed;
             const OptimizeResult res = optimize(m, cfg);
             m.theta = res.theta;
             m.noise_var = res.noise_var;
             fit(m);
             return py::make_tuple(res.theta, res.noise_var, res.lml);
           },
           py::arg("restarts") = 10, py::arg("max_iterations") = 100, py::arg("seed") = 0,
           "Maximize the marginal likelihood; leaves the model refit at the optimum");

  m.def("metrics",
        [](const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
          const Metrics s = metrics(predicted, actual);
          return py::make_tuple(s.rmse, s.mae, s.pearson);
        },
        py::arg("predicted"), py::arg("actual"), "(rmse, mae, pearson)");

  m.def("generate_treebank",
        [](int count, uint64_t seed, SymbolTable& table, int vocabulary, int max_depth) {
          TreebankConfig cfg;
          cfg.count = count;
          cfg.seed = seed;
          cfg.vocabulary = vocabulary;
          cfg.max_depth = max_depth;
          return generate_treebank(cfg, table);
        },
        py::arg("count"), py::arg("seed"), py::arg("table"), py::arg("vocabulary") = 40,
        py::arg("max_depth") = 6, "Deterministic random-PCFG treebank");

  m.def("sample_prior_targets", &sample_prior_targets, py::arg("inputs"), py::arg("spec"),
        py::arg("theta"), py::arg("noise_var"), py::arg("seed"), py::arg("threads") = 0,
        "Draw response variables from the GP prior over the inputs");
}
