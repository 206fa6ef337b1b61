#include "treegp/dataset.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "treegp/errors.hpp"

namespace treegp {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  // comma-separated with whitespace tolerated; plain whitespace also splits
  std::vector<std::string> out;
  std::string field;
  auto push = [&] {
    if (!field.empty()) {
      out.push_back(field);
      field.clear();
    }
  };
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\r')
      push();
    else
      field += c;
  }
  push();
  return out;
}

double parse_number(const std::string& field, const std::string& where) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    fail(codes::kIo, where + ": cannot parse number '" + field + "'");
  return value;
}

std::vector<std::string> read_data_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(codes::kIo, "cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

InputSet load_inputs(const std::vector<std::string>& tree_files, const std::string& features_file,
                     SymbolTable& table, std::vector<std::string>* feature_names) {
  InputSet inputs;
  int rows = -1;
  auto check_rows = [&](int n, const std::string& path) {
    if (rows < 0)
      rows = n;
    else if (n != rows)
      fail(codes::kLengthMismatch, path + " has " + std::to_string(n) + " rows, expected " +
                                       std::to_string(rows));
  };

  for (const std::string& path : tree_files) {
    inputs.tree_slots.push_back(load_tree_file(path, table));
    check_rows(static_cast<int>(inputs.tree_slots.back().size()), path);
  }

  if (!features_file.empty()) {
    const auto lines = read_data_lines(features_file);
    if (lines.empty()) fail(codes::kIo, features_file + ": no header row");
    const auto names = split_fields(lines[0]);
    std::set<std::string> seen(names.begin(), names.end());
    if (seen.size() != names.size())
      fail(codes::kConfig, features_file + ": feature names must be unique");
    const int d = static_cast<int>(names.size());
    const int n = static_cast<int>(lines.size()) - 1;
    inputs.dense.resize(n, d);
    for (int i = 0; i < n; ++i) {
      const auto fields = split_fields(lines[i + 1]);
      const std::string where = features_file + ":" + std::to_string(i + 2);
      if (static_cast<int>(fields.size()) != d)
        fail(codes::kLengthMismatch, where + ": expected " + std::to_string(d) + " fields");
      for (int j = 0; j < d; ++j) inputs.dense(i, j) = parse_number(fields[j], where);
    }
    check_rows(n, features_file);
    if (feature_names) *feature_names = names;
  }
  return inputs;
}

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.tree_files.empty() && spec.features_file.empty())
    fail(codes::kConfig, "dataset needs at least one tree file or a feature file");
  if (spec.targets_file.empty()) fail(codes::kConfig, "dataset needs a targets file");

  Dataset ds;
  ds.table = std::make_shared<SymbolTable>();
  ds.inputs = load_inputs(spec.tree_files, spec.features_file, *ds.table, &ds.feature_names);
  ds.inputs.table = ds.table;
  int rows = ds.inputs.rows();
  auto check_rows = [&](int n, const std::string& path) {
    if (n != rows)
      fail(codes::kLengthMismatch, path + " has " + std::to_string(n) + " rows, expected " +
                                       std::to_string(rows));
  };

  {
    const auto lines = read_data_lines(spec.targets_file);
    const int n = static_cast<int>(lines.size());
    int t = -1;
    for (int i = 0; i < n; ++i) {
      const auto fields = split_fields(lines[i]);
      const std::string where = spec.targets_file + ":" + std::to_string(i + 1);
      if (t < 0) {
        t = static_cast<int>(fields.size());
        if (t < 1) fail(codes::kIo, where + ": empty targets row");
        ds.targets.resize(n, t);
      } else if (static_cast<int>(fields.size()) != t) {
        fail(codes::kLengthMismatch, where + ": expected " + std::to_string(t) + " columns");
      }
      for (int j = 0; j < t; ++j) ds.targets(i, j) = parse_number(fields[j], where);
    }
    check_rows(n, spec.targets_file);
  }
  return ds;
}

void apply_per_word(Dataset& dataset, int tree_slot) {
  if (tree_slot < 0 || tree_slot >= static_cast<int>(dataset.inputs.tree_slots.size()))
    fail(codes::kConfig, "per-word tree slot out of range");
  const auto& trees = dataset.inputs.tree_slots[tree_slot];
  for (int i = 0; i < dataset.targets.rows(); ++i) {
    const int tokens = trees[i].token_count();
    if (tokens < 1) fail(codes::kConfig, "per-word transform hit a tree without tokens");
    dataset.targets.row(i) /= static_cast<double>(tokens);
  }
}

}  // namespace treegp
