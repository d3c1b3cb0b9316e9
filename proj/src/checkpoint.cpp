// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/checkpoint.hpp"

#include <fstream>
#include <map>

#include "sgda/errors.hpp"
#include "sgda/sgdt.hpp"

namespace sgda::checkpoint {

namespace fs = std::filesystem;

void save(const fs::path& dir, const nlohmann::json& config,
          std::span<const ad::NamedParameter> params) {
  fs::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& np : params) {
    const std::string file = np.name + ".sgdt";
    sgdt::write_file(dir / file, np.param->value, sgdt::Dtype::f64);
    entries.push_back({{"name", np.name},
                       {"file", file},
                       {"shape", np.param->value.shape()},
                       {"dtype", "f64"}});
  }
  nlohmann::json manifest = {{"format", kFormat}, {"config", config}, {"parameters", entries}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw Error("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw ParseError("missing manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    is >> m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }
  if (m.value("format", std::string()) != kFormat) {
    throw ParseError("manifest.json: unsupported format tag");
  }
  return m;
}

void load(const fs::path& dir, std::span<const ad::NamedParameter> params) {
  const nlohmann::json m = read_manifest(dir);
  std::map<std::string, std::string> files;
  for (const auto& e : m.at("parameters")) {
    files[e.at("name").get<std::string>()] = e.at("file").get<std::string>();
  }
  for (const auto& np : params) {
    auto it = files.find(np.name);
    if (it == files.end()) throw ParseError("checkpoint lacks parameter " + np.name);
    sgdt::Stored s = sgdt::read_file(dir / it->second);
    if (s.tensor.shape() != np.param->value.shape()) {
      throw DimensionError("checkpoint parameter " + np.name + " has shape " +
                           shape_str(s.tensor.shape()) + ", model expects " +
                           shape_str(np.param->value.shape()));
    }
    np.param->value = std::move(s.tensor);
    np.param->grad = Tensor(np.param->value.shape(), 0.0);
  }
}

std::size_t scalar_count(const fs::path& dir) {
  const nlohmann::json m = read_manifest(dir);
  std::size_t n = 0;
  for (const auto& e : m.at("parameters")) {
    n += sgdt::read_file(dir / e.at("file").get<std::string>()).tensor.size();
  }
  return n;
}

}  // namespace sgda::checkpoint
