#pragma once

#include <json.hpp>

#include <fstream>
#include <string>

#include "gatelab/errors.hpp"
#include "gatelab/params.hpp"

namespace gatelab {

/// Flat JSON checkpoint: {"format", "meta", "params": [{name, shape, trainable, data}]},
/// data stored row-major.
inline nlohmann::json params_to_json(const ParamSet& ps, const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json j;
  j["format"] = "gatelab-params/1";
  j["meta"] = meta;
  j["params"] = nlohmann::json::array();
  for (const auto& b : ps.blocks()) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(b.value.size()));
    for (Eigen::Index r = 0; r < b.value.rows(); ++r)
      for (Eigen::Index c = 0; c < b.value.cols(); ++c) data.push_back(b.value(r, c));
    j["params"].push_back({{"name", b.name},
                           {"shape", {b.value.rows(), b.value.cols()}},
                           {"trainable", b.trainable},
                           {"data", data}});
  }
  return j;
}

inline ParamSet params_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "gatelab-params/1") throw ConfigError("unrecognised checkpoint format");
  ParamSet ps;
  for (const auto& p : j.at("params")) {
    const auto shape = p.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2) throw ConfigError("checkpoint shapes must be two-dimensional");
    const auto data = p.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != shape[0] * shape[1])
      throw ConfigError("checkpoint block " + p.at("name").get<std::string>() + " has wrong element count");
    const auto i = ps.add(p.at("name").get<std::string>(), shape[0], shape[1], p.value("trainable", true));
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < shape[0]; ++r)
      for (Eigen::Index c = 0; c < shape[1]; ++c) ps[i](r, c) = data[n++];
  }
  return ps;
}

inline void save_checkpoint(const std::string& path, const ParamSet& ps, const nlohmann::json& meta = {}) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os << params_to_json(ps, meta.is_null() ? nlohmann::json::object() : meta).dump() << "\n";
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read: " + path);
  return nlohmann::json::parse(is);
}

inline ParamSet load_checkpoint(const std::string& path, nlohmann::json* meta = nullptr) {
  const auto j = load_json_file(path);
  if (meta) *meta = j.value("meta", nlohmann::json::object());
  return params_from_json(j);
}

}  // namespace gatelab
