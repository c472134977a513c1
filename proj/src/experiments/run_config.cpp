#include "primus/experiments/run_config.hpp"

#include <fstream>

#include "primus/experiments/json_fields.hpp"
#include "primus/numerics/errors.hpp"

namespace primus {

RunConfig run_config_from_json(const nlohmann::json& j) {
  using namespace json_fields;
  check_keys(j, "config", {"version", "model", "task", "recipe", "io"});
  if (!j.contains("version")) throw ConfigError("config.version is required");
  RunConfig c;
  read_optional(j, "config", "version", c.version);
  if (c.version != kRunConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(c.version) + " (expected " +
                      std::to_string(kRunConfigVersion) + ")");
  }
  if (j.contains("model")) c.model = config_from_json(j.at("model"));
  if (j.contains("task")) c.task = task_from_json(j.at("task"));
  if (j.contains("recipe")) c.recipe = recipe_from_json(j.at("recipe"));
  if (j.contains("io")) {
    const nlohmann::json& io = j.at("io");
    check_keys(io, "io", {"out_dir", "checkpoint_interval"});
    read_optional(io, "io", "out_dir", c.io.out_dir);
    read_optional(io, "io", "checkpoint_interval", c.io.checkpoint_interval);
  }
  c.model.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  return {
      {"version", c.version},
      {"model", to_json(c.model)},
      {"task", to_json(c.task)},
      {"recipe", to_json(c.recipe)},
      {"io", {{"out_dir", c.io.out_dir}, {"checkpoint_interval", c.io.checkpoint_interval}}},
  };
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(load_json_file(path)); }

}  // namespace primus
