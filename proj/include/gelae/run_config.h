#pragma once

// One flat JSON object configures every subcommand: model keys, training
// keys and file paths side by side. Unknown keys are rejected.

#include <string>
#include <vector>

#include "gelae/model.h"
#include "gelae/training.h"
#include "json.hpp"

namespace gelae {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string structures;
  std::string couplings;
  std::string charges;
  std::string dataset;     // featurized binary dataset
  std::string split;       // split JSON
  std::string checkpoint;
  std::string out_dir = ".";

  FeatureOptions feature_options() const {
    return {model.representation, model.dihedral_mode};
  }
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::string& path);

/// Applies "key=value" overrides. The value is read as JSON when it parses
/// (numbers, lists, quoted strings) and as a bare string otherwise.
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);

}  // namespace gelae
