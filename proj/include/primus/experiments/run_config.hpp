#pragma once

#include <string>

#include <json.hpp>

#include "primus/experiments/synthetic.hpp"
#include "primus/experiments/train.hpp"
#include "primus/model/config.hpp"

namespace primus {

inline constexpr int kRunConfigVersion = 1;

struct IoConfig {
  std::string out_dir;
  std::size_t checkpoint_interval = 0;  // steps between intermediate checkpoints; 0 writes only the final one
  bool operator==(const IoConfig&) const = default;
};

struct RunConfig {
  int version = kRunConfigVersion;
  PrimusConfig model;
  SyntheticTask task;
  TrainRecipe recipe;
  IoConfig io;
  bool operator==(const RunConfig&) const = default;
};

// Sections "version" (required), "model", "task", "recipe", "io"; unknown keys are
// rejected at every level. Throws ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
// Fully resolved: presets expanded, every field written.
nlohmann::json to_json(const RunConfig& c);

RunConfig load_run_config(const std::string& path);
nlohmann::json load_json_file(const std::string& path);

}  // namespace primus
