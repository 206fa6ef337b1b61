#include "treegp/report.hpp"

#include <cstdio>
#include <fstream>

#include "treegp/errors.hpp"
#include "treegp/version.hpp"

namespace treegp {

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.15g", value);
  return buf;
}

nlohmann::json base_report(const std::string& command, nlohmann::json config) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["command"] = command;
  j["config"] = std::move(config);
  j["timings"] = nlohmann::json::object();
  return j;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) fail(codes::kIo, "cannot write file: " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json named_hypers(const KernelSpec& spec, const Eigen::VectorXd& theta,
                            double noise_var) {
  nlohmann::json j = nlohmann::json::object();
  const auto names = spec.param_names();
  for (size_t i = 0; i < names.size(); ++i) j[names[i]] = theta[static_cast<int>(i)];
  j["noise"] = noise_var;
  return j;
}

nlohmann::json describe_spec(const KernelSpec& spec) {
  nlohmann::json j;
  switch (spec.kind) {
    case KernelSpec::Kind::kTree: {
      j["type"] = "tree";
      j["slot"] = spec.slot;
      switch (spec.scheme.variant()) {
        case TyingScheme::Variant::kTied: j["tying"] = "tied"; break;
        case TyingScheme::Variant::kPerSymbol: j["tying"] = "per-symbol"; break;
        case TyingScheme::Variant::kSubset:
          j["tying"] = "subset";
          j["subset_symbols"] = spec.scheme.subset_symbols();
          break;
      }
      j["groups"] = spec.scheme.group_names();
      j["alpha"] = spec.alpha_mode == AlphaMode::kFree ? "free" : "fixed1";
      j["normalized"] = spec.normalized;
      break;
    }
    case KernelSpec::Kind::kRbf: j["type"] = "rbf"; break;
    case KernelSpec::Kind::kSum:
    case KernelSpec::Kind::kProduct: {
      j["type"] = spec.kind == KernelSpec::Kind::kSum ? "sum" : "product";
      nlohmann::json children = nlohmann::json::array();
      for (const KernelSpec& c : spec.children) children.push_back(describe_spec(c));
      j["children"] = std::move(children);
      break;
    }
  }
  return j;
}

CsvWriter::CsvWriter(const std::string& path) : out_(path, std::ios::trunc) {
  if (!out_) fail(codes::kIo, "cannot write file: " + path);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << fields[i];
  }
  out_ << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out_ << ',';
    out_ << format_double(values[i]);
  }
  out_ << '\n';
}

}  // namespace treegp
