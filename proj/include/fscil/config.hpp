// SPDX-License-Identifier: Apache-2.0
//
// Flat JSON configuration covering data generation, model widths and
// training. `seed` is the only required key; unknown keys are rejected.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "fscil/error.hpp"
#include "fscil/experiment.hpp"
#include "fscil/feature_io.hpp"

namespace fscil {

inline DpdbMode parse_dpdb_mode(const std::string& s) {
  if (s == "full") return DpdbMode::Full;
  if (s == "no_nn") return DpdbMode::NoNN;
  if (s == "no_nn_bn") return DpdbMode::NoNNBN;
  if (s == "direct") return DpdbMode::Direct;
  throw ConfigError("dpdb_mode", "expected one of full, no_nn, no_nn_bn, direct; got '" + s + "'");
}

/// Output feature format for gen-data; not part of a run.
struct RunOptions {
  FeatureFormat feature_format = FeatureFormat::Csv;
};

struct LoadedConfig {
  ExperimentConfig experiment;
  RunOptions options;
};

namespace detail {

template <typename T>
T field(const nlohmann::json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(key, "expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(key, "expected a string");
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace detail

inline LoadedConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "configuration must be a JSON object");
  if (!j.contains("seed")) throw ConfigError("seed", "missing required field");

  LoadedConfig out;
  ExperimentConfig& c = out.experiment;
  GenSpec& g = c.gen;
  TrainConfig& t = c.train;
  using detail::field;

  const std::map<std::string, std::function<void(const nlohmann::json&, const std::string&)>> setters = {
      {"seed", [&](auto& v, auto& k) { c.set_seed(field<std::uint64_t>(v, k)); }},
      {"input_dim", [&](auto& v, auto& k) { g.input_dim = field<std::size_t>(v, k); }},
      {"classes_per_session",
       [&](auto& v, auto& k) {
         if (!v.is_array()) throw ConfigError(k, "expected an array of class counts");
         g.classes_per_session.clear();
         for (std::size_t i = 0; i < v.size(); ++i) {
           g.classes_per_session.push_back(field<std::size_t>(v[i], k + "[" + std::to_string(i) + "]"));
         }
       }},
      {"shot", [&](auto& v, auto& k) { g.shot = field<std::size_t>(v, k); }},
      {"base_train_per_class", [&](auto& v, auto& k) { g.base_train_per_class = field<std::size_t>(v, k); }},
      {"test_per_class", [&](auto& v, auto& k) { g.test_per_class = field<std::size_t>(v, k); }},
      {"cluster_spread", [&](auto& v, auto& k) { g.cluster_spread = field<double>(v, k); }},
      {"confound_strength", [&](auto& v, auto& k) { g.confound_strength = field<double>(v, k); }},
      {"base_epochs", [&](auto& v, auto& k) { t.base_epochs = field<std::size_t>(v, k); }},
      {"base_lr", [&](auto& v, auto& k) { t.base_lr = field<double>(v, k); }},
      {"incr_iters", [&](auto& v, auto& k) { t.incr_iters = field<std::size_t>(v, k); }},
      {"incr_lr", [&](auto& v, auto& k) { t.incr_lr = field<double>(v, k); }},
      {"lambda_ac", [&](auto& v, auto& k) { t.lambda_ac = field<double>(v, k); }},
      {"batch_base", [&](auto& v, auto& k) { t.batch_base = field<std::size_t>(v, k); }},
      {"batch_incr", [&](auto& v, auto& k) { t.batch_incr = field<std::size_t>(v, k); }},
      {"num_proxies", [&](auto& v, auto& k) { t.num_proxies = field<std::size_t>(v, k); }},
      {"bw_enabled", [&](auto& v, auto& k) { t.bw_enabled = field<bool>(v, k); }},
      {"opa_enabled", [&](auto& v, auto& k) { t.opa_enabled = field<bool>(v, k); }},
      {"rd_enabled", [&](auto& v, auto& k) { t.rd_enabled = field<bool>(v, k); }},
      {"dpdb_mode", [&](auto& v, auto& k) { t.dpdb_mode = parse_dpdb_mode(field<std::string>(v, k)); }},
      {"momentum", [&](auto& v, auto& k) { t.momentum = field<double>(v, k); }},
      {"train_classifier_incremental",
       [&](auto& v, auto& k) { t.train_classifier_incremental = field<bool>(v, k); }},
      {"proxy_steps", [&](auto& v, auto& k) { t.proxy_steps = field<std::size_t>(v, k); }},
      {"proxy_lr", [&](auto& v, auto& k) { t.proxy_lr = field<double>(v, k); }},
      {"backbone_hidden", [&](auto& v, auto& k) { t.dims.backbone_hidden = field<std::size_t>(v, k); }},
      {"backbone_hidden_layers",
       [&](auto& v, auto& k) { t.dims.backbone_hidden_layers = field<std::size_t>(v, k); }},
      {"backbone_out", [&](auto& v, auto& k) { t.dims.backbone_out = field<std::size_t>(v, k); }},
      {"controller_hidden", [&](auto& v, auto& k) { t.dims.controller_hidden = field<std::size_t>(v, k); }},
      {"controller_out", [&](auto& v, auto& k) { t.dims.controller_out = field<std::size_t>(v, k); }},
      {"identity_backbone", [&](auto& v, auto& k) { t.dims.identity_backbone = field<bool>(v, k); }},
      {"data_manifest", [&](auto& v, auto& k) { c.data_manifest = field<std::string>(v, k); }},
      {"feature_format",
       [&](auto& v, auto& k) {
         const auto s = field<std::string>(v, k);
         if (s == "csv") {
           out.options.feature_format = FeatureFormat::Csv;
         } else if (s == "bin") {
           out.options.feature_format = FeatureFormat::Binary;
         } else {
           throw ConfigError(k, "expected csv or bin");
         }
       }},
  };

  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(key, "unknown field");
    it->second(value, key);
  }

  auto positive = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  positive(t.base_lr > 0.0, "base_lr", "must be positive");
  positive(t.incr_lr > 0.0, "incr_lr", "must be positive");
  positive(t.proxy_lr > 0.0, "proxy_lr", "must be positive");
  positive(t.lambda_ac >= 0.0, "lambda_ac", "must be non-negative");
  positive(t.batch_base > 0, "batch_base", "must be >= 1");
  positive(t.batch_incr > 0, "batch_incr", "must be >= 1");
  positive(t.momentum >= 0.0 && t.momentum < 1.0, "momentum", "must lie in [0, 1)");
  positive(g.cluster_spread >= 0.0, "cluster_spread", "must be non-negative");
  positive(g.confound_strength >= 0.0 && g.confound_strength < 1.0, "confound_strength", "must lie in [0, 1)");
  positive(!g.classes_per_session.empty(), "classes_per_session", "needs at least the base session");
  return out;
}

inline nlohmann::json config_json(const ExperimentConfig& c) {
  const GenSpec& g = c.gen;
  const TrainConfig& t = c.train;
  nlohmann::json j = {
      {"seed", t.seed},
      {"input_dim", g.input_dim},
      {"classes_per_session", g.classes_per_session},
      {"shot", g.shot},
      {"base_train_per_class", g.base_train_per_class},
      {"test_per_class", g.test_per_class},
      {"cluster_spread", g.cluster_spread},
      {"confound_strength", g.confound_strength},
      {"base_epochs", t.base_epochs},
      {"base_lr", t.base_lr},
      {"incr_iters", t.incr_iters},
      {"incr_lr", t.incr_lr},
      {"lambda_ac", t.lambda_ac},
      {"batch_base", t.batch_base},
      {"batch_incr", t.batch_incr},
      {"num_proxies", t.num_proxies},
      {"bw_enabled", t.bw_enabled},
      {"opa_enabled", t.opa_enabled},
      {"rd_enabled", t.rd_enabled},
      {"dpdb_mode", dpdb_name(t.dpdb_mode)},
      {"momentum", t.momentum},
      {"train_classifier_incremental", t.train_classifier_incremental},
      {"proxy_steps", t.proxy_steps},
      {"proxy_lr", t.proxy_lr},
      {"backbone_hidden", t.dims.backbone_hidden},
      {"backbone_hidden_layers", t.dims.backbone_hidden_layers},
      {"backbone_out", t.dims.backbone_out},
      {"controller_hidden", t.dims.controller_hidden},
      {"controller_out", t.dims.controller_out},
      {"identity_backbone", t.dims.identity_backbone},
  };
  if (c.data_manifest) j["data_manifest"] = *c.data_manifest;
  return j;
}

inline LoadedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  LoadedConfig cfg = config_from_json(j);
  if (cfg.experiment.data_manifest) {
    const std::filesystem::path m(*cfg.experiment.data_manifest);
    if (m.is_relative()) cfg.experiment.data_manifest = (path.parent_path() / m).string();
  }
  return cfg;
}

/// Generated or loaded session data for a configuration.
inline std::vector<SessionDataset> sessions_for(const ExperimentConfig& c) {
  if (c.data_manifest) return load_features(*c.data_manifest).sessions;
  return gen_synthetic(c.gen);
}

}  // namespace fscil
