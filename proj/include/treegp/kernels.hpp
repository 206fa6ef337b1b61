#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "treegp/tree.hpp"

namespace treegp {

enum class AlphaMode { kFree, kFixedAtOne };

// Maps every non-terminal symbol to a decay/selector hyperparameter group.
// Group indices are contiguous from 0 and every scheme carries a catch-all
// group, so symbols first interned after construction (e.g. at prediction
// time) always resolve to a group.
class TyingScheme {
 public:
  enum class Variant { kTied, kPerSymbol, kSubset };

  TyingScheme() = default;  // tied, single group

  // One group shared by every symbol.
  static TyingScheme tied();
  // One group per symbol currently in the table, plus a trailing catch-all.
  static TyingScheme per_symbol(const SymbolTable& table);
  // Group 0 holds the listed symbols (interning them if needed), group 1 is
  // the catch-all for everything else.
  static TyingScheme subset(SymbolTable& table, const std::vector<std::string>& symbols);

  Variant variant() const { return variant_; }
  int group_count() const { return static_cast<int>(names_.size()); }
  int group_of(int32_t symbol_id) const {
    return symbol_id >= 0 && symbol_id < static_cast<int32_t>(group_by_symbol_.size())
               ? group_by_symbol_[symbol_id]
               : catch_all_;
  }
  const std::string& group_name(int group) const { return names_.at(group); }
  const std::vector<std::string>& group_names() const { return names_; }
  // Listed symbols of a subset scheme (empty otherwise); used to rebuild the
  // scheme when a model is reloaded.
  const std::vector<std::string>& subset_symbols() const { return subset_symbols_; }

 private:
  Variant variant_ = Variant::kTied;
  std::vector<int32_t> group_by_symbol_;
  int32_t catch_all_ = 0;
  std::vector<std::string> names_ = {"all"};
  std::vector<std::string> subset_symbols_;
};

// Decay weights (lambda, > 0) and child selectors (alpha, >= 0), one of each
// per tying group.
struct TreeKernelHypers {
  Eigen::VectorXd lambda;
  Eigen::VectorXd alpha;

  static TreeKernelHypers constant(int groups, double lambda_value, double alpha_value);
  void validate(const TyingScheme& scheme) const;
};

struct TreeKernelResult {
  double value = 0.0;
  Eigen::VectorXd d_lambda;
  Eigen::VectorXd d_alpha;
};

// Unnormalized subset-tree kernel with exact per-group gradients. Value and
// both gradients are produced in one dynamic-programming pass over node pairs
// with matching productions, children before parents.
TreeKernelResult sstk_with_grads(const ParsedTree& t1, const ParsedTree& t2,
                                 const TreeKernelHypers& hypers, const TyingScheme& scheme);
double sstk_value(const ParsedTree& t1, const ParsedTree& t2, const TreeKernelHypers& hypers,
                  const TyingScheme& scheme);

// Exponential-time evaluation by explicit fragment enumeration: every
// fragment is rooted at a node and either cuts or expands each non-terminal
// child; a fragment weighs the product of lambda over its internal nodes
// times alpha (of the parent's group) per cut child. Testing oracle only;
// trees above `max_nodes` non-terminals are rejected.
double brute_force_kernel(const ParsedTree& t1, const ParsedTree& t2,
                          const TreeKernelHypers& hypers, const TyingScheme& scheme,
                          int max_nodes);

// k12 / sqrt(k11 * k22); requires positive self kernels.
double normalize_value(double k12, double k11, double k22);
// Normalized value and its exact gradient given raw values and gradients.
void normalize_with_grads(double k12, double k11, double k22, const Eigen::VectorXd& dk12,
                          const Eigen::VectorXd& dk11, const Eigen::VectorXd& dk22, double* value,
                          Eigen::VectorXd* grad);

struct RbfHypers {
  double variance = 1.0;     // signal variance, > 0
  double lengthscale = 1.0;  // isotropic, > 0
  void validate() const;
};

struct RbfResult {
  double value = 0.0;
  double d_variance = 0.0;
  double d_lengthscale = 0.0;
};

// variance * exp(-|x1 - x2|^2 / (2 * lengthscale^2)) with exact gradients.
RbfResult rbf_with_grads(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                         const RbfHypers& hypers);

enum class ParamKind { kLambda, kAlpha, kRbfVariance, kRbfLengthscale };

// Composable kernel description. Leaves address one slot of a multi-part
// input (a tree slot or the dense-vector slot); Sum/Product combine children
// elementwise. The flattened hyperparameter vector concatenates the leaves'
// parameters in depth-first order: per tree leaf all lambdas then (when alpha
// is free) all alphas, per RBF leaf variance then lengthscale.
struct KernelSpec {
  enum class Kind { kTree, kRbf, kSum, kProduct };

  Kind kind = Kind::kTree;
  int slot = 0;  // tree slot index (tree leaves); RBF always reads the dense slot
  TyingScheme scheme;
  AlphaMode alpha_mode = AlphaMode::kFree;
  bool normalized = true;
  std::vector<KernelSpec> children;

  static KernelSpec tree(int slot, TyingScheme scheme, AlphaMode alpha_mode = AlphaMode::kFree,
                         bool normalized = true);
  static KernelSpec rbf();
  static KernelSpec sum(std::vector<KernelSpec> children);
  static KernelSpec product(std::vector<KernelSpec> children);

  int param_count() const;
  // Names in flattening order: "lambda.<group>", "alpha.<group>",
  // "rbf.variance", "rbf.lengthscale"; prefixed "k<i>." when the spec has
  // more than one leaf.
  std::vector<std::string> param_names() const;
  std::vector<ParamKind> param_kinds() const;
  // Customary defaults: lambda 0.4, alpha 1, RBF variance/lengthscale 1.
  Eigen::VectorXd default_theta() const;
};

// Rows of aligned multi-part inputs: zero or more tree slots plus an optional
// dense-feature slot.
struct InputSet {
  std::shared_ptr<const SymbolTable> table;  // optional shared ownership
  std::vector<std::vector<ParsedTree>> tree_slots;
  Eigen::MatrixXd dense;  // n x d; 0 x 0 when unused

  int rows() const;
  InputSet subset(const std::vector<int>& row_indices) const;
};

struct GramResult {
  Eigen::MatrixXd K;                // n x n, symmetric
  std::vector<Eigen::MatrixXd> dK;  // one symmetric matrix per hyperparameter
};

// Validates that `theta` matches the spec layout and every type invariant.
void validate_theta(const KernelSpec& spec, const Eigen::VectorXd& theta);

// Symmetric Gram matrix over `inputs`; only the upper triangle is computed
// and mirrored. With `want_grads`, dK covers every entry of theta. Cells are
// evaluated in parallel over `threads` workers (<= 0 uses all cores).
GramResult gram_matrix(const InputSet& inputs, const KernelSpec& spec,
                       const Eigen::VectorXd& theta, bool want_grads, int threads = 0);

// Kernel evaluations between two input sets (rows1 x rows2), values only.
Eigen::MatrixXd cross_gram(const InputSet& inputs1, const InputSet& inputs2,
                           const KernelSpec& spec, const Eigen::VectorXd& theta, int threads = 0);

// k(x, x) per row, values only.
Eigen::VectorXd gram_diag(const InputSet& inputs, const KernelSpec& spec,
                          const Eigen::VectorXd& theta);

// Leaf layout of the flattened hyperparameter vector.
struct LeafSlice {
  const KernelSpec* leaf;
  int offset;
  int count;
};
std::vector<LeafSlice> leaf_slices(const KernelSpec& spec);

// Unpacks a tree leaf's slice of theta into kernel hyperparameters (alpha
// filled with ones under fixed-alpha mode).
TreeKernelHypers tree_hypers_from_theta(const KernelSpec& leaf, const double* theta);

}  // namespace treegp
