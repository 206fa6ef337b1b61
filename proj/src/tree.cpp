#include "treegp/tree.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "treegp/errors.hpp"

namespace treegp {

int32_t SymbolTable::intern_symbol(std::string_view text) {
  auto it = symbol_ids_.find(std::string(text));
  if (it != symbol_ids_.end()) return it->second;
  const int32_t id = static_cast<int32_t>(symbols_.size());
  symbols_.emplace_back(text);
  symbol_ids_.emplace(symbols_.back(), id);
  return id;
}

int32_t SymbolTable::find_symbol(std::string_view text) const {
  auto it = symbol_ids_.find(std::string(text));
  return it == symbol_ids_.end() ? -1 : it->second;
}

const std::string& SymbolTable::symbol_text(int32_t id) const { return symbols_.at(id); }

int32_t SymbolTable::intern_production(const std::string& key) {
  auto it = production_ids_.find(key);
  if (it != production_ids_.end()) return it->second;
  const int32_t id = static_cast<int32_t>(production_keys_.size());
  production_keys_.push_back(key);
  production_ids_.emplace(key, id);
  return id;
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

struct Frame {
  std::string label;
  std::vector<NodeChild> children;
  size_t open_pos = 0;
};

int32_t finish_node(std::vector<TreeNode>& nodes, std::vector<std::string>& words,
                    SymbolTable& table, Frame&& frame) {
  TreeNode node;
  node.symbol = table.intern_symbol(frame.label);
  node.children = std::move(frame.children);
  node.preterminal = node.children.size() == 1 && node.children[0].is_terminal();

  // Production key: head label plus each child position, with terminal words
  // spelled out so that lexical items participate in production identity.
  std::string key = frame.label;
  for (const NodeChild& c : node.children) {
    key += '\x1f';
    if (c.is_terminal()) {
      key += '\x02';
      key += words[c.word];
    } else {
      key += '\x03';
      key += table.symbol_text(nodes[c.node].symbol);
    }
  }
  node.production = table.intern_production(key);
  nodes.push_back(std::move(node));
  return static_cast<int32_t>(nodes.size()) - 1;
}

}  // namespace

ParsedTree parse_bracketed(std::string_view text, SymbolTable& table) {
  ParsedTree tree;
  tree.table_ = &table;

  std::vector<Frame> stack;
  bool done = false;
  size_t i = 0;
  const size_t n = text.size();

  auto skip_space = [&] {
    while (i < n && is_space(text[i])) ++i;
  };
  auto read_atom = [&] {
    const size_t start = i;
    while (i < n && !is_space(text[i]) && text[i] != '(' && text[i] != ')') ++i;
    return text.substr(start, i - start);
  };

  while (true) {
    skip_space();
    if (i >= n) break;
    if (done) {
      if (text[i] == ')')
        fail(codes::kUnbalancedBrackets, "unmatched ')' at position " + std::to_string(i));
      fail(codes::kTrailingContent,
           "unexpected content after the tree at position " + std::to_string(i));
    }
    const char c = text[i];
    if (c == '(') {
      const size_t open = i++;
      skip_space();
      if (i >= n || text[i] == '(' || text[i] == ')')
        fail(codes::kNodeWithoutLabel,
             "node opened at position " + std::to_string(open) + " has no label");
      stack.push_back(Frame{std::string(read_atom()), {}, open});
    } else if (c == ')') {
      if (stack.empty())
        fail(codes::kUnbalancedBrackets, "unmatched ')' at position " + std::to_string(i));
      ++i;
      Frame frame = std::move(stack.back());
      stack.pop_back();
      if (frame.children.empty())
        fail(codes::kNodeWithoutChildren, "node '" + frame.label + "' at position " +
                                              std::to_string(frame.open_pos) + " has no children");
      const int32_t node = finish_node(tree.nodes_, tree.words_, table, std::move(frame));
      if (stack.empty())
        done = true;
      else
        stack.back().children.push_back(NodeChild{node, -1});
    } else {
      const size_t start = i;
      std::string_view atom = read_atom();
      if (stack.empty())
        fail(codes::kExpectedBracket,
             "expected '(' but found '" + std::string(atom) + "' at position " +
                 std::to_string(start));
      const int32_t wid = static_cast<int32_t>(tree.words_.size());
      tree.words_.emplace_back(atom);
      stack.back().children.push_back(NodeChild{-1, wid});
    }
  }

  if (!done) {
    if (stack.empty()) fail(codes::kEmptyTree, "no tree found in input");
    fail(codes::kUnbalancedBrackets,
         "unclosed '(' at position " + std::to_string(stack.back().open_pos));
  }
  tree.build_index();
  return tree;
}

void ParsedTree::build_index() {
  std::vector<std::pair<int32_t, int32_t>> entries;
  entries.reserve(nodes_.size());
  for (int32_t i = 0; i < static_cast<int32_t>(nodes_.size()); ++i)
    entries.emplace_back(nodes_[i].production, i);
  std::sort(entries.begin(), entries.end());
  index_prods_.resize(entries.size());
  index_nodes_.resize(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    index_prods_[i] = entries[i].first;
    index_nodes_[i] = entries[i].second;
  }
}

std::span<const int32_t> ParsedTree::nodes_with_production(int32_t prod) const {
  const auto lo = std::lower_bound(index_prods_.begin(), index_prods_.end(), prod);
  const auto hi = std::upper_bound(lo, index_prods_.end(), prod);
  const size_t off = static_cast<size_t>(lo - index_prods_.begin());
  return {index_nodes_.data() + off, static_cast<size_t>(hi - lo)};
}

std::string ParsedTree::pretty() const {
  struct Item {
    int32_t node = -1;
    int32_t word = -1;
    bool close = false;
  };
  std::string out;
  std::vector<Item> stack;
  stack.push_back(Item{root(), -1, false});
  while (!stack.empty()) {
    const Item item = stack.back();
    stack.pop_back();
    if (item.close) {
      out += ')';
      continue;
    }
    if (item.word >= 0) {
      out += ' ';
      out += words_[item.word];
      continue;
    }
    if (!out.empty() && out.back() != '(') out += ' ';
    const TreeNode& node = nodes_[item.node];
    out += '(';
    out += table_->symbol_text(node.symbol);
    stack.push_back(Item{-1, -1, true});
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it)
      stack.push_back(Item{it->node, it->word, false});
  }
  return out;
}

std::vector<ParsedTree> load_tree_file(const std::string& path, SymbolTable& table) {
  std::ifstream in(path);
  if (!in) fail(codes::kIo, "cannot open tree file: " + path);
  std::vector<ParsedTree> trees;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      trees.push_back(parse_bracketed(line, table));
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trees;
}

std::vector<std::pair<int32_t, int32_t>> matching_node_pairs(const ParsedTree& t1,
                                                             const ParsedTree& t2) {
  if (t1.table() == nullptr || t1.table() != t2.table())
    fail(codes::kMismatchedSymbolTables, "trees must share one symbol table");
  std::vector<std::pair<int32_t, int32_t>> pairs;
  const auto& nodes1 = t1.nodes();
  for (int32_t a = 0; a < static_cast<int32_t>(nodes1.size()); ++a)
    for (int32_t b : t2.nodes_with_production(nodes1[a].production))
      pairs.emplace_back(a, b);
  return pairs;
}

}  // namespace treegp
