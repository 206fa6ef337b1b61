#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "treegp/kernels.hpp"

namespace treegp {

// Aligned file columns of a user-supplied dataset: zero or more tree files
// (one slot each), an optional dense-feature CSV (header row, unique names)
// and a targets file with one row of decimals per input (one or more columns
// for multi-target data).
struct DatasetSpec {
  std::vector<std::string> tree_files;
  std::string features_file;
  std::string targets_file;
};

struct Dataset {
  std::shared_ptr<SymbolTable> table;
  InputSet inputs;
  Eigen::MatrixXd targets;  // n x t
  std::vector<std::string> feature_names;
};

// Loads and aligns all files; every file must have exactly the same number of
// data rows. Errors carry file and line positions.
Dataset load_dataset(const DatasetSpec& spec);

// Inputs only (tree slots plus optional features), interning into an existing
// table; used to load test rows against a trained model's table.
InputSet load_inputs(const std::vector<std::string>& tree_files, const std::string& features_file,
                     SymbolTable& table, std::vector<std::string>* feature_names = nullptr);

// Divides every target column by the token count of the given tree slot
// (applied before centering).
void apply_per_word(Dataset& dataset, int tree_slot);

}  // namespace treegp
