#include "gelae/run_config.h"

#include <fstream>
#include <set>
#include <stdexcept>

namespace gelae {

namespace {

const std::set<std::string>& model_keys() {
  static const std::set<std::string> keys = [] {
    const nlohmann::json defaults = to_json(ModelConfig{});
    std::set<std::string> k;
    for (const auto& [key, _] : defaults.items()) k.insert(key);
    return k;
  }();
  return keys;
}

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys = [] {
    const nlohmann::json defaults = to_json(TrainConfig{});
    std::set<std::string> k;
    for (const auto& [key, _] : defaults.items()) k.insert(key);
    return k;
  }();
  return keys;
}

std::string* path_field(RunConfig& c, const std::string& key) {
  if (key == "structures") return &c.structures;
  if (key == "couplings") return &c.couplings;
  if (key == "charges") return &c.charges;
  if (key == "dataset") return &c.dataset;
  if (key == "split") return &c.split;
  if (key == "checkpoint") return &c.checkpoint;
  if (key == "out_dir") return &c.out_dir;
  return nullptr;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = to_json(c.model);
  j.update(to_json(c.train));
  j["structures"] = c.structures;
  j["couplings"] = c.couplings;
  j["charges"] = c.charges;
  j["dataset"] = c.dataset;
  j["split"] = c.split;
  j["checkpoint"] = c.checkpoint;
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  nlohmann::json model = nlohmann::json::object();
  nlohmann::json train = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    if (model_keys().count(key)) {
      model[key] = value;
    } else if (train_keys().count(key)) {
      train[key] = value;
    } else if (std::string* field = path_field(c, key)) {
      *field = value.is_string() ? value.get<std::string>() : value.dump();
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  c.model = model_config_from_json(model, c.model);
  c.train = train_config_from_json(train, c.train);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
  nlohmann::json patch = nlohmann::json::object();
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("override '" + a + "' is not key=value");
    }
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    const auto parsed = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    patch[key] = parsed.is_discarded() ? nlohmann::json(text) : parsed;
  }
  config = run_config_from_json(patch, config);
}

}  // namespace gelae
