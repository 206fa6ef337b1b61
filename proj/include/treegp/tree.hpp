#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace treegp {

// Interns non-terminal labels and grammar productions shared by a set of
// trees. Construction is single-writer; once all trees are loaded the table
// is read-only and safe to share across threads.
class SymbolTable {
 public:
  // Returns the id of `text`, assigning the next contiguous id when new.
  int32_t intern_symbol(std::string_view text);
  // Returns the id of `text`, or -1 when it has never been interned.
  int32_t find_symbol(std::string_view text) const;
  const std::string& symbol_text(int32_t id) const;
  int32_t symbol_count() const { return static_cast<int32_t>(symbols_.size()); }

  // Productions are interned by an opaque key that encodes the head label and
  // each child (terminal words spelled out, so "(A a)" != "(A b)").
  int32_t intern_production(const std::string& key);
  int32_t production_count() const { return static_cast<int32_t>(production_keys_.size()); }
  const std::string& production_key(int32_t id) const { return production_keys_[id]; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int32_t> symbol_ids_;
  std::vector<std::string> production_keys_;
  std::unordered_map<std::string, int32_t> production_ids_;
};

// One child position of a node: either a non-terminal child (index into the
// node array) or a terminal word (index into the tree's word list).
struct NodeChild {
  int32_t node = -1;
  int32_t word = -1;
  bool is_terminal() const { return word >= 0; }
};

struct TreeNode {
  int32_t symbol = -1;
  int32_t production = -1;
  bool preterminal = false;
  std::vector<NodeChild> children;
};

// Immutable constituency tree. Nodes are stored in post-order (children
// before parents, root last) so dynamic programs over node pairs can run in
// plain index order. All downstream computation is read-only.
class ParsedTree {
 public:
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  int32_t root() const { return static_cast<int32_t>(nodes_.size()) - 1; }
  int token_count() const { return static_cast<int>(words_.size()); }
  const std::string& word(int32_t id) const { return words_[id]; }
  const SymbolTable* table() const { return table_; }

  // Canonical bracketed form: single spaces, no redundant whitespace.
  std::string pretty() const;

  // Node indices carrying production `prod`, ascending.
  std::span<const int32_t> nodes_with_production(int32_t prod) const;

 private:
  friend ParsedTree parse_bracketed(std::string_view, SymbolTable&);

  void build_index();

  const SymbolTable* table_ = nullptr;
  std::vector<TreeNode> nodes_;
  std::vector<std::string> words_;
  std::vector<int32_t> index_prods_;  // sorted production ids
  std::vector<int32_t> index_nodes_;  // node ids grouped by production
};

// Parses a single bracketed tree. Labels and terminals are whitespace
// delimited; a label must immediately follow "(". All non-terminal labels are
// registered in `table`.
ParsedTree parse_bracketed(std::string_view text, SymbolTable& table);

// Tree file ingestion contract: UTF-8 text, exactly one bracketed tree per
// non-empty line, lines starting with '#' are comments. Errors are reported
// with "path:line:" prefixes.
std::vector<ParsedTree> load_tree_file(const std::string& path, SymbolTable& table);

// All node pairs with equal production id, ordered by (first index, second
// index). Pairs with different productions contribute nothing to the kernel
// and are skipped.
std::vector<std::pair<int32_t, int32_t>> matching_node_pairs(const ParsedTree& t1,
                                                             const ParsedTree& t2);

}  // namespace treegp
