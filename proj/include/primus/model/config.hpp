#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "primus/model/volume.hpp"

namespace primus {

struct PrimusConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t embed_dim = 48;
  std::size_t patch_size = 8;
  Dims3 input_patch{24, 24, 24};
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::size_t mlp_hidden = 0;  // 0 selects 8d/3

  bool use_lpe = false;
  bool use_rope = true;
  double rope_fov = 1.0;
  double rope_base = 10000.0;

  bool layer_scale = true;
  double layer_scale_init = 0.1;
  bool post_attn_norm = true;
  double drop_path = 0.2;
  double attn_dropout = 0.0;
  double proj_dropout = 0.0;
  std::size_t register_tokens = 0;

  std::vector<std::size_t> decoder_schedule;  // empty selects the default schedule
  bool decoder_norm = true;
  double norm_eps = 1e-6;

  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t hidden_dim() const;
  Dims3 grid() const;
  std::size_t tokens() const { return voxel_count(grid()); }
  std::size_t decoder_stages() const;
  // Resolved per-stage output channels (length == decoder_stages()).
  std::vector<std::size_t> decoder_channels() const;

  // Throws ConfigError for any inconsistent field.
  void validate() const;

  bool operator==(const PrimusConfig&) const = default;
};

// Default decoder widths: max(8, d / 8^s) for stage s = 1..log2(k).
std::vector<std::size_t> default_decoder_schedule(std::size_t embed_dim, std::size_t patch_size);

// Named presets: "primus-s", "primus-b", "primus-m", "primus-l", "nano".
PrimusConfig preset(const std::string& name);
const std::vector<std::string>& preset_names();

nlohmann::json to_json(const PrimusConfig& cfg);
// Strict: unknown keys are rejected. A "preset" key expands first; other keys override it.
PrimusConfig config_from_json(const nlohmann::json& j);

// Parses "ZxYxX" (or a single "N" for a cube).
Dims3 parse_dims(const std::string& text);

}  // namespace primus
