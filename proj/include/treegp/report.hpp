#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "treegp/kernels.hpp"

namespace treegp {

// Full double precision in decimal; report numbers never truncate below
// twelve significant digits of the stored value.
std::string format_double(double value);

// JSON summary skeleton shared by every command: toolkit version, command
// name and the fully resolved configuration. Timing fields live under a
// single "timings" object so reruns stay byte-comparable after dropping it.
nlohmann::json base_report(const std::string& command, nlohmann::json config);

void write_json(const std::string& path, const nlohmann::json& j);

// Hyperparameters as named entries in spec flattening order.
nlohmann::json named_hypers(const KernelSpec& spec, const Eigen::VectorXd& theta,
                            double noise_var);

// Serializable description of a kernel spec (tying scheme, alpha mode,
// normalization, combinators) sufficient to rebuild it against a reloaded
// symbol table.
nlohmann::json describe_spec(const KernelSpec& spec);

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  void row(const std::vector<std::string>& fields);
  void row(const std::vector<double>& values);

 private:
  std::ofstream out_;
};

}  // namespace treegp
