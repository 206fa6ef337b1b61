#include "treegp/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <map>
#include <thread>

#include "treegp/errors.hpp"

namespace treegp {

// ---------------------------------------------------------------------------
// Tying schemes
// ---------------------------------------------------------------------------

TyingScheme TyingScheme::tied() { return TyingScheme(); }

TyingScheme TyingScheme::per_symbol(const SymbolTable& table) {
  TyingScheme s;
  s.variant_ = Variant::kPerSymbol;
  const int32_t n = table.symbol_count();
  s.group_by_symbol_.resize(n);
  s.names_.clear();
  for (int32_t i = 0; i < n; ++i) {
    s.group_by_symbol_[i] = i;
    s.names_.push_back(table.symbol_text(i));
  }
  s.catch_all_ = n;
  s.names_.push_back("other");
  return s;
}

TyingScheme TyingScheme::subset(SymbolTable& table, const std::vector<std::string>& symbols) {
  if (symbols.empty()) fail(codes::kConfig, "subset tying scheme needs at least one symbol");
  TyingScheme s;
  s.variant_ = Variant::kSubset;
  s.subset_symbols_ = symbols;
  s.group_by_symbol_.assign(table.symbol_count(), 1);
  std::string joined;
  for (const std::string& sym : symbols) {
    const int32_t id = table.intern_symbol(sym);
    if (id >= static_cast<int32_t>(s.group_by_symbol_.size()))
      s.group_by_symbol_.resize(id + 1, 1);
    s.group_by_symbol_[id] = 0;
    if (!joined.empty()) joined += '+';
    joined += sym;
  }
  s.catch_all_ = 1;
  s.names_ = {joined, "rest"};
  return s;
}

TreeKernelHypers TreeKernelHypers::constant(int groups, double lambda_value, double alpha_value) {
  TreeKernelHypers h;
  h.lambda = Eigen::VectorXd::Constant(groups, lambda_value);
  h.alpha = Eigen::VectorXd::Constant(groups, alpha_value);
  return h;
}

void TreeKernelHypers::validate(const TyingScheme& scheme) const {
  const int k = scheme.group_count();
  if (lambda.size() != k || alpha.size() != k)
    fail(codes::kConfig, "hyperparameter vectors must have one entry per tying group");
  for (int i = 0; i < k; ++i) {
    if (!(lambda[i] > 0.0))
      fail(codes::kConfig, "lambda." + scheme.group_name(i) + " must be > 0");
    if (!(alpha[i] >= 0.0))
      fail(codes::kConfig, "alpha." + scheme.group_name(i) + " must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// Subset-tree kernel dynamic program
// ---------------------------------------------------------------------------

namespace {

// Dense accumulator over hyperparameter groups with epoch-stamped laziness,
// used to merge the children's sparse gradient rows of one node pair.
struct Accum {
  std::vector<double> value;
  std::vector<uint64_t> stamp;
  std::vector<int32_t> touched;
  uint64_t epoch = 0;

  void init(int k) {
    if (static_cast<int>(value.size()) < k) {
      value.resize(k, 0.0);
      stamp.resize(k, 0);
    }
  }
  void begin() {
    ++epoch;
    touched.clear();
  }
  void add(int32_t i, double v) {
    if (stamp[i] != epoch) {
      stamp[i] = epoch;
      value[i] = v;
      touched.push_back(i);
    } else {
      value[i] += v;
    }
  }
};

// Per-pair gradient rows are sparse (only groups on the recursion path) and
// live in one arena that is reused across evaluations.
struct RowArena {
  struct Span {
    uint32_t off = 0;
    uint32_t len = 0;
  };
  std::vector<int32_t> idx;
  std::vector<double> val;
  std::vector<Span> lambda_rows;
  std::vector<Span> alpha_rows;

  void clear() {
    idx.clear();
    val.clear();
    lambda_rows.clear();
    alpha_rows.clear();
  }
  Span store(Accum& acc, Eigen::VectorXd& total) {
    std::sort(acc.touched.begin(), acc.touched.end());
    Span s{static_cast<uint32_t>(idx.size()), 0};
    for (int32_t i : acc.touched) {
      const double v = acc.value[i];
      if (v == 0.0) continue;
      idx.push_back(i);
      val.push_back(v);
      total[i] += v;
      ++s.len;
    }
    return s;
  }
};

struct DpWorkspace {
  std::vector<double> delta;   // n1*n2 value matrix, 0 where productions differ
  std::vector<int32_t> slot;   // n1*n2 row index per matched pair, -1 otherwise
  std::vector<size_t> child_cell;
  std::vector<double> pref, suff;
  RowArena rows;
  Accum acc_lambda, acc_alpha;
};

thread_local DpWorkspace tls_dp;

template <bool WithGrads>
double sstk_core(const ParsedTree& t1, const ParsedTree& t2, const TreeKernelHypers& h,
                 const TyingScheme& scheme, Eigen::VectorXd* dlam, Eigen::VectorXd* dalpha) {
  if (t1.table() == nullptr || t1.table() != t2.table())
    fail(codes::kMismatchedSymbolTables, "trees must share one symbol table");
  const auto& nodes1 = t1.nodes();
  const auto& nodes2 = t2.nodes();
  const size_t w = nodes2.size();
  const int k = scheme.group_count();

  DpWorkspace& ws = tls_dp;
  ws.delta.assign(nodes1.size() * w, 0.0);
  if constexpr (WithGrads) {
    ws.slot.assign(nodes1.size() * w, -1);
    ws.rows.clear();
    ws.acc_lambda.init(k);
    ws.acc_alpha.init(k);
    dlam->setZero(k);
    dalpha->setZero(k);
  }

  double total = 0.0;
  // Post-order node ids guarantee every child pair is finished before its
  // parents, so a single pass in index order suffices.
  for (int32_t a = 0; a < static_cast<int32_t>(nodes1.size()); ++a) {
    const TreeNode& na = nodes1[a];
    const auto matches = t2.nodes_with_production(na.production);
    if (matches.empty()) continue;
    const int g = scheme.group_of(na.symbol);
    const double lam_g = h.lambda[g];
    const double alpha_g = h.alpha[g];

    for (int32_t b : matches) {
      const TreeNode& nb = nodes2[b];
      if constexpr (WithGrads) {
        ws.acc_lambda.begin();
        ws.acc_alpha.begin();
      }

      // Matching productions align children position by position; terminal
      // children are fixed by the match and contribute a unit factor.
      ws.child_cell.clear();
      ws.pref.clear();
      ws.pref.push_back(1.0);
      for (size_t ci = 0; ci < na.children.size(); ++ci) {
        const NodeChild& c1 = na.children[ci];
        if (c1.is_terminal()) continue;
        const size_t cell = static_cast<size_t>(c1.node) * w + nb.children[ci].node;
        ws.child_cell.push_back(cell);
        ws.pref.push_back(ws.pref.back() * (alpha_g + ws.delta[cell]));
      }
      const int m = static_cast<int>(ws.child_cell.size());

      double value;
      if (m == 0) {
        value = lam_g;
        if constexpr (WithGrads) ws.acc_lambda.add(g, 1.0);
      } else {
        // Prefix/suffix products give the product-rule cofactors without
        // division, so zero factors (alpha = 0) stay exact.
        ws.suff.assign(m + 1, 1.0);
        for (int i = m - 1; i >= 0; --i)
          ws.suff[i] = (alpha_g + ws.delta[ws.child_cell[i]]) * ws.suff[i + 1];
        const double gval = ws.pref[m];
        value = lam_g * gval;
        if constexpr (WithGrads) {
          ws.acc_lambda.add(g, gval);
          double cofactor_sum = 0.0;
          for (int i = 0; i < m; ++i) {
            const double p = ws.pref[i] * ws.suff[i + 1];
            cofactor_sum += p;
            if (p == 0.0) continue;
            const int32_t cslot = ws.slot[ws.child_cell[i]];
            if (cslot < 0) continue;
            const double scale = lam_g * p;
            const RowArena::Span ls = ws.rows.lambda_rows[cslot];
            for (uint32_t e = 0; e < ls.len; ++e)
              ws.acc_lambda.add(ws.rows.idx[ls.off + e], scale * ws.rows.val[ls.off + e]);
            const RowArena::Span as = ws.rows.alpha_rows[cslot];
            for (uint32_t e = 0; e < as.len; ++e)
              ws.acc_alpha.add(ws.rows.idx[as.off + e], scale * ws.rows.val[as.off + e]);
          }
          ws.acc_alpha.add(g, lam_g * cofactor_sum);
        }
      }

      const size_t cell = static_cast<size_t>(a) * w + b;
      ws.delta[cell] = value;
      total += value;
      if constexpr (WithGrads) {
        ws.slot[cell] = static_cast<int32_t>(ws.rows.lambda_rows.size());
        const RowArena::Span lspan = ws.rows.store(ws.acc_lambda, *dlam);
        ws.rows.lambda_rows.push_back(lspan);
        const RowArena::Span aspan = ws.rows.store(ws.acc_alpha, *dalpha);
        ws.rows.alpha_rows.push_back(aspan);
      }
    }
  }
  return total;
}

}  // namespace

TreeKernelResult sstk_with_grads(const ParsedTree& t1, const ParsedTree& t2,
                                 const TreeKernelHypers& h, const TyingScheme& scheme) {
  h.validate(scheme);
  TreeKernelResult r;
  r.value = sstk_core<true>(t1, t2, h, scheme, &r.d_lambda, &r.d_alpha);
  return r;
}

double sstk_value(const ParsedTree& t1, const ParsedTree& t2, const TreeKernelHypers& h,
                  const TyingScheme& scheme) {
  h.validate(scheme);
  return sstk_core<false>(t1, t2, h, scheme, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// Fragment-enumeration oracle
// ---------------------------------------------------------------------------

namespace {

struct Fragment {
  std::string repr;
  double weight;
};

void enumerate_fragments(const ParsedTree& t, const TreeKernelHypers& h,
                         const TyingScheme& scheme, std::vector<std::vector<Fragment>>& memo,
                         int32_t node_id) {
  if (!memo[node_id].empty()) return;
  const TreeNode& node = t.nodes()[node_id];
  const int g = scheme.group_of(node.symbol);

  // Options per child position: a terminal word is mandatory; a non-terminal
  // child is either cut (bare symbol leaf, weight alpha of the parent group)
  // or expanded into any fragment rooted at it.
  std::vector<std::vector<Fragment>> options;
  for (const NodeChild& c : node.children) {
    std::vector<Fragment> opts;
    if (c.is_terminal()) {
      opts.push_back({t.word(c.word), 1.0});
    } else {
      opts.push_back({t.table()->symbol_text(t.nodes()[c.node].symbol), h.alpha[g]});
      enumerate_fragments(t, h, scheme, memo, c.node);
      for (const Fragment& f : memo[c.node]) opts.push_back(f);
    }
    options.push_back(std::move(opts));
  }

  std::vector<Fragment> out;
  std::vector<size_t> pick(options.size(), 0);
  while (true) {
    Fragment f;
    f.repr = "(" + t.table()->symbol_text(node.symbol);
    f.weight = h.lambda[g];
    for (size_t i = 0; i < options.size(); ++i) {
      const Fragment& part = options[i][pick[i]];
      f.repr += ' ';
      f.repr += part.repr;
      f.weight *= part.weight;
    }
    f.repr += ')';
    out.push_back(std::move(f));
    size_t i = 0;
    while (i < options.size() && ++pick[i] == options[i].size()) pick[i++] = 0;
    if (i == options.size()) break;
  }
  memo[node_id] = std::move(out);
}

std::map<std::string, std::pair<double, double>> fragment_counts(const ParsedTree& t,
                                                                 const TreeKernelHypers& h,
                                                                 const TyingScheme& scheme) {
  std::vector<std::vector<Fragment>> memo(t.node_count());
  std::map<std::string, std::pair<double, double>> counts;  // repr -> (count, weight)
  for (int32_t n = 0; n < t.node_count(); ++n) {
    enumerate_fragments(t, h, scheme, memo, n);
    for (const Fragment& f : memo[n]) {
      auto [it, fresh] = counts.emplace(f.repr, std::make_pair(0.0, f.weight));
      it->second.first += 1.0;
      (void)fresh;
    }
  }
  return counts;
}

}  // namespace

double brute_force_kernel(const ParsedTree& t1, const ParsedTree& t2, const TreeKernelHypers& h,
                          const TyingScheme& scheme, int max_nodes) {
  h.validate(scheme);
  if (t1.table() == nullptr || t1.table() != t2.table())
    fail(codes::kMismatchedSymbolTables, "trees must share one symbol table");
  if (t1.node_count() > max_nodes || t2.node_count() > max_nodes)
    fail(codes::kTooLarge, "fragment enumeration limited to " + std::to_string(max_nodes) +
                               " non-terminals per tree");
  const auto c1 = fragment_counts(t1, h, scheme);
  const auto c2 = fragment_counts(t2, h, scheme);
  double total = 0.0;
  for (const auto& [repr, entry] : c1) {
    const auto it = c2.find(repr);
    if (it == c2.end()) continue;
    total += entry.second * entry.first * it->second.first;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Normalization and RBF
// ---------------------------------------------------------------------------

double normalize_value(double k12, double k11, double k22) {
  if (!(k11 > 0.0) || !(k22 > 0.0))
    fail(codes::kDegenerateSelfKernel, "self kernel must be positive to normalize");
  return k12 / std::sqrt(k11 * k22);
}

void normalize_with_grads(double k12, double k11, double k22, const Eigen::VectorXd& dk12,
                          const Eigen::VectorXd& dk11, const Eigen::VectorXd& dk22, double* value,
                          Eigen::VectorXd* grad) {
  if (dk11.size() != dk12.size() || dk22.size() != dk12.size())
    fail(codes::kDimensionMismatch, "gradient vectors must have equal lengths");
  const double norm = normalize_value(k12, k11, k22);
  *value = norm;
  *grad = dk12 / std::sqrt(k11 * k22) - norm * (dk11 * k22 + k11 * dk22) / (2.0 * k11 * k22);
}

void RbfHypers::validate() const {
  if (!(variance > 0.0)) fail(codes::kConfig, "rbf.variance must be > 0");
  if (!(lengthscale > 0.0)) fail(codes::kConfig, "rbf.lengthscale must be > 0");
}

RbfResult rbf_with_grads(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                         const RbfHypers& h) {
  h.validate();
  if (x1.size() != x2.size())
    fail(codes::kDimensionMismatch, "rbf inputs must have equal dimensions");
  const double r2 = (x1 - x2).squaredNorm();
  const double e = std::exp(-r2 / (2.0 * h.lengthscale * h.lengthscale));
  RbfResult r;
  r.value = h.variance * e;
  r.d_variance = e;
  r.d_lengthscale = r.value * r2 / (h.lengthscale * h.lengthscale * h.lengthscale);
  return r;
}

// ---------------------------------------------------------------------------
// Kernel specifications
// ---------------------------------------------------------------------------

KernelSpec KernelSpec::tree(int slot, TyingScheme scheme, AlphaMode alpha_mode, bool normalized) {
  KernelSpec s;
  s.kind = Kind::kTree;
  s.slot = slot;
  s.scheme = std::move(scheme);
  s.alpha_mode = alpha_mode;
  s.normalized = normalized;
  return s;
}

KernelSpec KernelSpec::rbf() {
  KernelSpec s;
  s.kind = Kind::kRbf;
  return s;
}

KernelSpec KernelSpec::sum(std::vector<KernelSpec> children) {
  if (children.empty()) fail(codes::kConfig, "sum kernel needs at least one child");
  KernelSpec s;
  s.kind = Kind::kSum;
  s.children = std::move(children);
  return s;
}

KernelSpec KernelSpec::product(std::vector<KernelSpec> children) {
  if (children.empty()) fail(codes::kConfig, "product kernel needs at least one child");
  KernelSpec s;
  s.kind = Kind::kProduct;
  s.children = std::move(children);
  return s;
}

namespace {

void collect_leaves(const KernelSpec& spec, std::vector<const KernelSpec*>& out) {
  if (spec.kind == KernelSpec::Kind::kSum || spec.kind == KernelSpec::Kind::kProduct) {
    for (const KernelSpec& c : spec.children) collect_leaves(c, out);
  } else {
    out.push_back(&spec);
  }
}

int leaf_param_count(const KernelSpec& leaf) {
  if (leaf.kind == KernelSpec::Kind::kRbf) return 2;
  const int k = leaf.scheme.group_count();
  return leaf.alpha_mode == AlphaMode::kFree ? 2 * k : k;
}

}  // namespace

std::vector<LeafSlice> leaf_slices(const KernelSpec& spec) {
  std::vector<const KernelSpec*> leaves;
  collect_leaves(spec, leaves);
  std::vector<LeafSlice> slices;
  int offset = 0;
  for (const KernelSpec* leaf : leaves) {
    const int count = leaf_param_count(*leaf);
    slices.push_back({leaf, offset, count});
    offset += count;
  }
  return slices;
}

int KernelSpec::param_count() const {
  int total = 0;
  for (const LeafSlice& s : leaf_slices(*this)) total += s.count;
  return total;
}

std::vector<std::string> KernelSpec::param_names() const {
  const auto slices = leaf_slices(*this);
  std::vector<std::string> names;
  for (size_t li = 0; li < slices.size(); ++li) {
    const KernelSpec& leaf = *slices[li].leaf;
    const std::string prefix = slices.size() > 1 ? "k" + std::to_string(li) + "." : "";
    if (leaf.kind == Kind::kRbf) {
      names.push_back(prefix + "rbf.variance");
      names.push_back(prefix + "rbf.lengthscale");
    } else {
      for (const std::string& g : leaf.scheme.group_names()) names.push_back(prefix + "lambda." + g);
      if (leaf.alpha_mode == AlphaMode::kFree)
        for (const std::string& g : leaf.scheme.group_names()) names.push_back(prefix + "alpha." + g);
    }
  }
  return names;
}

std::vector<ParamKind> KernelSpec::param_kinds() const {
  std::vector<ParamKind> kinds;
  for (const LeafSlice& s : leaf_slices(*this)) {
    if (s.leaf->kind == Kind::kRbf) {
      kinds.push_back(ParamKind::kRbfVariance);
      kinds.push_back(ParamKind::kRbfLengthscale);
    } else {
      const int k = s.leaf->scheme.group_count();
      kinds.insert(kinds.end(), k, ParamKind::kLambda);
      if (s.leaf->alpha_mode == AlphaMode::kFree) kinds.insert(kinds.end(), k, ParamKind::kAlpha);
    }
  }
  return kinds;
}

Eigen::VectorXd KernelSpec::default_theta() const {
  const auto kinds = param_kinds();
  Eigen::VectorXd theta(static_cast<int>(kinds.size()));
  for (size_t i = 0; i < kinds.size(); ++i)
    theta[i] = kinds[i] == ParamKind::kLambda ? 0.4 : 1.0;
  return theta;
}

TreeKernelHypers tree_hypers_from_theta(const KernelSpec& leaf, const double* theta) {
  const int k = leaf.scheme.group_count();
  TreeKernelHypers h;
  h.lambda = Eigen::Map<const Eigen::VectorXd>(theta, k);
  h.alpha = leaf.alpha_mode == AlphaMode::kFree
                ? Eigen::Map<const Eigen::VectorXd>(theta + k, k).eval()
                : Eigen::VectorXd::Ones(k).eval();
  return h;
}

void validate_theta(const KernelSpec& spec, const Eigen::VectorXd& theta) {
  if (theta.size() != spec.param_count())
    fail(codes::kConfig, "hyperparameter vector has length " + std::to_string(theta.size()) +
                             ", spec expects " + std::to_string(spec.param_count()));
  const auto kinds = spec.param_kinds();
  const auto names = spec.param_names();
  for (int i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta[i])) fail(codes::kConfig, names[i] + " is not finite");
    if (kinds[i] == ParamKind::kAlpha) {
      if (theta[i] < 0.0) fail(codes::kConfig, names[i] + " must be >= 0");
    } else if (!(theta[i] > 0.0)) {
      fail(codes::kConfig, names[i] + " must be > 0");
    }
  }
}

// ---------------------------------------------------------------------------
// Input sets
// ---------------------------------------------------------------------------

int InputSet::rows() const {
  if (!tree_slots.empty()) return static_cast<int>(tree_slots.front().size());
  return static_cast<int>(dense.rows());
}

InputSet InputSet::subset(const std::vector<int>& row_indices) const {
  InputSet out;
  out.table = table;
  out.tree_slots.resize(tree_slots.size());
  for (size_t s = 0; s < tree_slots.size(); ++s) {
    out.tree_slots[s].reserve(row_indices.size());
    for (int r : row_indices) out.tree_slots[s].push_back(tree_slots[s][r]);
  }
  if (dense.size() > 0) {
    out.dense.resize(static_cast<int>(row_indices.size()), dense.cols());
    for (size_t i = 0; i < row_indices.size(); ++i) out.dense.row(i) = dense.row(row_indices[i]);
  }
  return out;
}

namespace {

void validate_inputs(const InputSet& inputs, const KernelSpec& spec) {
  const int n = inputs.rows();
  for (const auto& slot : inputs.tree_slots)
    if (static_cast<int>(slot.size()) != n)
      fail(codes::kLengthMismatch, "tree slots must have aligned row counts");
  if (inputs.dense.size() > 0 && inputs.dense.rows() != n)
    fail(codes::kLengthMismatch, "dense slot must align with tree slots");
  for (const LeafSlice& s : leaf_slices(spec)) {
    if (s.leaf->kind == KernelSpec::Kind::kTree) {
      if (s.leaf->slot < 0 || s.leaf->slot >= static_cast<int>(inputs.tree_slots.size()))
        fail(codes::kConfig, "kernel addresses tree slot " + std::to_string(s.leaf->slot) +
                                 " but the input has " +
                                 std::to_string(inputs.tree_slots.size()) + " tree slot(s)");
    } else if (inputs.dense.cols() < 1) {
      fail(codes::kConfig, "kernel addresses the dense slot but the input has no features");
    }
  }
}

// ---------------------------------------------------------------------------
// Gram assembly
// ---------------------------------------------------------------------------

void parallel_for(size_t count, int threads, const std::function<void(size_t)>& body) {
  int t = threads <= 0 ? static_cast<int>(std::thread::hardware_concurrency()) : threads;
  t = std::max(1, std::min<int>(t, static_cast<int>(count)));
  if (t == 1) {
    for (size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(t - 1);
  for (int i = 1; i < t; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct LeafGram {
  Eigen::MatrixXd K;
  std::vector<Eigen::MatrixXd> dK;  // leaf-local parameter order
};

// Concatenates a tree-kernel result into the leaf's parameter layout.
Eigen::VectorXd leaf_grad_vector(const KernelSpec& leaf, const TreeKernelResult& r) {
  const int k = leaf.scheme.group_count();
  if (leaf.alpha_mode == AlphaMode::kFree) {
    Eigen::VectorXd g(2 * k);
    g.head(k) = r.d_lambda;
    g.tail(k) = r.d_alpha;
    return g;
  }
  return r.d_lambda;
}

LeafGram eval_tree_leaf(const InputSet& inputs, const KernelSpec& leaf, const double* theta,
                        int param_count, bool want_grads, int threads) {
  const auto& trees = inputs.tree_slots[leaf.slot];
  const int n = static_cast<int>(trees.size());
  const TreeKernelHypers h = tree_hypers_from_theta(leaf, theta);
  h.validate(leaf.scheme);

  std::vector<double> self_value(n);
  std::vector<Eigen::VectorXd> self_grad(want_grads ? n : 0);
  parallel_for(n, threads, [&](size_t i) {
    if (want_grads) {
      const TreeKernelResult r = sstk_with_grads(trees[i], trees[i], h, leaf.scheme);
      self_value[i] = r.value;
      self_grad[i] = leaf_grad_vector(leaf, r);
    } else {
      self_value[i] = sstk_value(trees[i], trees[i], h, leaf.scheme);
    }
  });

  LeafGram out;
  out.K.resize(n, n);
  if (want_grads) out.dK.assign(param_count, Eigen::MatrixXd(n, n));

  // Diagonal first: a normalized kernel has unit self-similarity with zero
  // gradient by construction.
  for (int i = 0; i < n; ++i) {
    if (leaf.normalized) {
      if (!(self_value[i] > 0.0))
        fail(codes::kDegenerateSelfKernel, "self kernel must be positive to normalize");
      out.K(i, i) = 1.0;
      for (int p = 0; p < param_count && want_grads; ++p) out.dK[p](i, i) = 0.0;
    } else {
      out.K(i, i) = self_value[i];
      for (int p = 0; p < param_count && want_grads; ++p) out.dK[p](i, i) = self_grad[i][p];
    }
  }

  std::vector<std::pair<int, int>> cells;
  cells.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) cells.emplace_back(i, j);

  parallel_for(cells.size(), threads, [&](size_t c) {
    const auto [i, j] = cells[c];
    if (want_grads) {
      const TreeKernelResult r = sstk_with_grads(trees[i], trees[j], h, leaf.scheme);
      double value = r.value;
      Eigen::VectorXd grad = leaf_grad_vector(leaf, r);
      if (leaf.normalized) {
        double norm_value;
        Eigen::VectorXd norm_grad;
        normalize_with_grads(r.value, self_value[i], self_value[j], grad, self_grad[i],
                             self_grad[j], &norm_value, &norm_grad);
        value = norm_value;
        grad = std::move(norm_grad);
      }
      out.K(i, j) = out.K(j, i) = value;
      for (int p = 0; p < param_count; ++p) out.dK[p](i, j) = out.dK[p](j, i) = grad[p];
    } else {
      double value = sstk_value(trees[i], trees[j], h, leaf.scheme);
      if (leaf.normalized) value = normalize_value(value, self_value[i], self_value[j]);
      out.K(i, j) = out.K(j, i) = value;
    }
  });
  return out;
}

LeafGram eval_rbf_leaf(const InputSet& inputs, const double* theta, bool want_grads,
                       int threads) {
  const RbfHypers h{theta[0], theta[1]};
  h.validate();
  const int n = static_cast<int>(inputs.dense.rows());
  LeafGram out;
  out.K.resize(n, n);
  if (want_grads) out.dK.assign(2, Eigen::MatrixXd(n, n));
  for (int i = 0; i < n; ++i) {
    out.K(i, i) = h.variance;
    if (want_grads) {
      out.dK[0](i, i) = 1.0;
      out.dK[1](i, i) = 0.0;
    }
  }
  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) cells.emplace_back(i, j);
  parallel_for(cells.size(), threads, [&](size_t c) {
    const auto [i, j] = cells[c];
    const RbfResult r = rbf_with_grads(inputs.dense.row(i), inputs.dense.row(j), h);
    out.K(i, j) = out.K(j, i) = r.value;
    if (want_grads) {
      out.dK[0](i, j) = out.dK[0](j, i) = r.d_variance;
      out.dK[1](i, j) = out.dK[1](j, i) = r.d_lengthscale;
    }
  });
  return out;
}

// Combines leaf Grams per the spec tree; scatters each leaf's gradient block
// into the global dK, applying the product rule at product nodes.
Eigen::MatrixXd combine_node(const KernelSpec& node, std::vector<LeafGram>& leaves,
                             size_t& leaf_cursor, int& param_cursor, GramResult& out,
                             bool want_grads) {
  if (node.kind == KernelSpec::Kind::kTree || node.kind == KernelSpec::Kind::kRbf) {
    LeafGram& lg = leaves[leaf_cursor++];
    if (want_grads)
      for (auto& d : lg.dK) out.dK[param_cursor++] = std::move(d);
    return std::move(lg.K);
  }
  const int params_before = param_cursor;
  std::vector<Eigen::MatrixXd> child_k;
  std::vector<std::pair<int, int>> child_param_ranges;
  for (const KernelSpec& c : node.children) {
    const int start = param_cursor;
    child_k.push_back(combine_node(c, leaves, leaf_cursor, param_cursor, out, want_grads));
    child_param_ranges.emplace_back(start, param_cursor);
  }
  if (node.kind == KernelSpec::Kind::kSum) {
    Eigen::MatrixXd k = std::move(child_k[0]);
    for (size_t i = 1; i < child_k.size(); ++i) k += child_k[i];
    return k;
  }
  // Product: elementwise, with prefix/suffix cofactors so the gradient of
  // child l is scaled by the product of every sibling.
  const size_t m = child_k.size();
  std::vector<Eigen::MatrixXd> pref(m + 1), suff(m + 1);
  pref[0] = Eigen::MatrixXd::Ones(child_k[0].rows(), child_k[0].cols());
  suff[m] = pref[0];
  for (size_t i = 0; i < m; ++i) pref[i + 1] = pref[i].cwiseProduct(child_k[i]);
  for (size_t i = m; i-- > 0;) suff[i] = suff[i + 1].cwiseProduct(child_k[i]);
  if (want_grads) {
    for (size_t l = 0; l < m; ++l) {
      const Eigen::MatrixXd cofactor = pref[l].cwiseProduct(suff[l + 1]);
      for (int p = child_param_ranges[l].first; p < child_param_ranges[l].second; ++p)
        out.dK[p] = out.dK[p].cwiseProduct(cofactor);
    }
  }
  (void)params_before;
  return pref[m];
}

}  // namespace

GramResult gram_matrix(const InputSet& inputs, const KernelSpec& spec,
                       const Eigen::VectorXd& theta, bool want_grads, int threads) {
  validate_inputs(inputs, spec);
  validate_theta(spec, theta);
  const auto slices = leaf_slices(spec);
  std::vector<LeafGram> leaves;
  leaves.reserve(slices.size());
  for (const LeafSlice& s : slices) {
    if (s.leaf->kind == KernelSpec::Kind::kTree)
      leaves.push_back(
          eval_tree_leaf(inputs, *s.leaf, theta.data() + s.offset, s.count, want_grads, threads));
    else
      leaves.push_back(eval_rbf_leaf(inputs, theta.data() + s.offset, want_grads, threads));
  }
  GramResult out;
  if (want_grads) out.dK.resize(spec.param_count());
  size_t leaf_cursor = 0;
  int param_cursor = 0;
  out.K = combine_node(spec, leaves, leaf_cursor, param_cursor, out, want_grads);
  return out;
}

namespace {

Eigen::MatrixXd cross_leaf(const InputSet& in1, const InputSet& in2, const KernelSpec& leaf,
                           const double* theta, int threads) {
  if (leaf.kind == KernelSpec::Kind::kRbf) {
    const RbfHypers h{theta[0], theta[1]};
    h.validate();
    const int n1 = static_cast<int>(in1.dense.rows());
    const int n2 = static_cast<int>(in2.dense.rows());
    Eigen::MatrixXd k(n1, n2);
    parallel_for(static_cast<size_t>(n1), threads, [&](size_t i) {
      for (int j = 0; j < n2; ++j)
        k(static_cast<int>(i), j) = rbf_with_grads(in1.dense.row(i), in2.dense.row(j), h).value;
    });
    return k;
  }
  const auto& trees1 = in1.tree_slots[leaf.slot];
  const auto& trees2 = in2.tree_slots[leaf.slot];
  const TreeKernelHypers h = tree_hypers_from_theta(leaf, theta);
  h.validate(leaf.scheme);
  const int n1 = static_cast<int>(trees1.size());
  const int n2 = static_cast<int>(trees2.size());
  std::vector<double> self1(n1), self2(n2);
  if (leaf.normalized) {
    parallel_for(n1, threads,
                 [&](size_t i) { self1[i] = sstk_value(trees1[i], trees1[i], h, leaf.scheme); });
    parallel_for(n2, threads,
                 [&](size_t j) { self2[j] = sstk_value(trees2[j], trees2[j], h, leaf.scheme); });
  }
  Eigen::MatrixXd k(n1, n2);
  parallel_for(static_cast<size_t>(n1), threads, [&](size_t i) {
    for (int j = 0; j < n2; ++j) {
      double value = sstk_value(trees1[i], trees2[j], h, leaf.scheme);
      if (leaf.normalized) value = normalize_value(value, self1[i], self2[j]);
      k(static_cast<int>(i), j) = value;
    }
  });
  return k;
}

Eigen::MatrixXd combine_values(const KernelSpec& node, std::vector<Eigen::MatrixXd>& leaves,
                               size_t& cursor) {
  if (node.kind == KernelSpec::Kind::kTree || node.kind == KernelSpec::Kind::kRbf)
    return std::move(leaves[cursor++]);
  Eigen::MatrixXd k = combine_values(node.children[0], leaves, cursor);
  for (size_t i = 1; i < node.children.size(); ++i) {
    const Eigen::MatrixXd c = combine_values(node.children[i], leaves, cursor);
    if (node.kind == KernelSpec::Kind::kSum)
      k += c;
    else
      k = k.cwiseProduct(c);
  }
  return k;
}

}  // namespace

Eigen::MatrixXd cross_gram(const InputSet& inputs1, const InputSet& inputs2,
                           const KernelSpec& spec, const Eigen::VectorXd& theta, int threads) {
  validate_inputs(inputs1, spec);
  validate_inputs(inputs2, spec);
  validate_theta(spec, theta);
  std::vector<Eigen::MatrixXd> leaves;
  for (const LeafSlice& s : leaf_slices(spec))
    leaves.push_back(cross_leaf(inputs1, inputs2, *s.leaf, theta.data() + s.offset, threads));
  size_t cursor = 0;
  return combine_values(spec, leaves, cursor);
}

Eigen::VectorXd gram_diag(const InputSet& inputs, const KernelSpec& spec,
                          const Eigen::VectorXd& theta) {
  validate_inputs(inputs, spec);
  validate_theta(spec, theta);
  const int n = inputs.rows();
  std::vector<Eigen::MatrixXd> leaves;
  for (const LeafSlice& s : leaf_slices(spec)) {
    Eigen::MatrixXd d(n, 1);
    if (s.leaf->kind == KernelSpec::Kind::kRbf) {
      const RbfHypers h{theta[s.offset], theta[s.offset + 1]};
      h.validate();
      d.setConstant(h.variance);
    } else if (s.leaf->normalized) {
      d.setOnes();
    } else {
      const TreeKernelHypers h = tree_hypers_from_theta(*s.leaf, theta.data() + s.offset);
      h.validate(s.leaf->scheme);
      const auto& trees = inputs.tree_slots[s.leaf->slot];
      for (int i = 0; i < n; ++i) d(i, 0) = sstk_value(trees[i], trees[i], h, s.leaf->scheme);
    }
    leaves.push_back(std::move(d));
  }
  size_t cursor = 0;
  return combine_values(spec, leaves, cursor).col(0);
}

}  // namespace treegp
