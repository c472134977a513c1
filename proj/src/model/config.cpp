#include "primus/model/config.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <set>

#include "primus/numerics/errors.hpp"

namespace primus {

std::size_t PrimusConfig::hidden_dim() const { return mlp_hidden ? mlp_hidden : embed_dim * 8 / 3; }

Dims3 PrimusConfig::grid() const {
  Dims3 g{};
  for (int i = 0; i < 3; ++i) g[i] = patch_size ? input_patch[i] / patch_size : 0;
  return g;
}

std::size_t PrimusConfig::decoder_stages() const {
  return patch_size ? std::size_t(std::countr_zero(patch_size)) : 0;
}

std::vector<std::size_t> default_decoder_schedule(std::size_t embed_dim, std::size_t patch_size) {
  std::vector<std::size_t> out;
  std::size_t c = embed_dim;
  for (std::size_t s = 1; s < patch_size; s *= 2) {
    c /= 8;
    out.push_back(std::max<std::size_t>(8, c));
  }
  return out;
}

std::vector<std::size_t> PrimusConfig::decoder_channels() const {
  return decoder_schedule.empty() ? default_decoder_schedule(embed_dim, patch_size) : decoder_schedule;
}

void PrimusConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (layers == 0) fail("layers must be >= 1");
  if (heads == 0 || embed_dim == 0) fail("heads and embed_dim must be >= 1");
  if (embed_dim % heads) fail("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
  if (use_rope && head_dim() % 6) {
    fail("head_dim " + std::to_string(head_dim()) + " must be divisible by 6 for 3D RoPE");
  }
  if (patch_size < 2 || !std::has_single_bit(patch_size)) fail("patch_size must be a power of two >= 2");
  for (int i = 0; i < 3; ++i) {
    if (input_patch[i] == 0 || input_patch[i] % patch_size) {
      fail("input_patch " + to_string(input_patch) + " not divisible by patch_size " + std::to_string(patch_size));
    }
  }
  if (in_channels == 0) fail("in_channels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (hidden_dim() == 0) fail("mlp_hidden resolves to 0");
  if (!(rope_fov > 0)) fail("rope_fov must be > 0");
  if (!(rope_base > 1)) fail("rope_base must be > 1");
  if (drop_path < 0 || drop_path >= 1) fail("drop_path must be in [0, 1)");
  if (attn_dropout < 0 || attn_dropout >= 1) fail("attn_dropout must be in [0, 1)");
  if (proj_dropout < 0 || proj_dropout >= 1) fail("proj_dropout must be in [0, 1)");
  if (!(norm_eps > 0)) fail("norm_eps must be > 0");
  if (!decoder_schedule.empty()) {
    if (decoder_schedule.size() != decoder_stages()) {
      fail("decoder_schedule has " + std::to_string(decoder_schedule.size()) + " stages; patch_size " +
           std::to_string(patch_size) + " needs " + std::to_string(decoder_stages()) + " stride-2 stages");
    }
    for (std::size_t c : decoder_schedule)
      if (c == 0) fail("decoder_schedule entries must be >= 1");
  }
}

namespace {

PrimusConfig make(std::size_t layers, std::size_t heads, std::size_t d) {
  PrimusConfig c;
  c.layers = layers;
  c.heads = heads;
  c.embed_dim = d;
  c.input_patch = {96, 96, 96};
  return c;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"primus-s", "primus-b", "primus-m", "primus-l", "nano"};
  return names;
}

PrimusConfig preset(const std::string& name) {
  if (name == "primus-s") return make(12, 6, 396);
  if (name == "primus-b") return make(12, 12, 792);
  if (name == "primus-m") return make(16, 12, 864);
  if (name == "primus-l") return make(24, 16, 1056);
  if (name == "nano") return PrimusConfig{};
  throw ConfigError("unknown model preset '" + name + "'");
}

nlohmann::json to_json(const PrimusConfig& c) {
  return {
      {"layers", c.layers},
      {"heads", c.heads},
      {"embed_dim", c.embed_dim},
      {"patch_size", c.patch_size},
      {"input_patch", c.input_patch},
      {"in_channels", c.in_channels},
      {"num_classes", c.num_classes},
      {"mlp_hidden", c.hidden_dim()},
      {"use_lpe", c.use_lpe},
      {"use_rope", c.use_rope},
      {"rope_fov", c.rope_fov},
      {"rope_base", c.rope_base},
      {"layer_scale", c.layer_scale},
      {"layer_scale_init", c.layer_scale_init},
      {"post_attn_norm", c.post_attn_norm},
      {"drop_path", c.drop_path},
      {"attn_dropout", c.attn_dropout},
      {"proj_dropout", c.proj_dropout},
      {"register_tokens", c.register_tokens},
      {"decoder_schedule", c.decoder_channels()},
      {"decoder_norm", c.decoder_norm},
      {"norm_eps", c.norm_eps},
  };
}

namespace {

template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& out) {
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model.") + key + ": " + e.what());
  }
}

}  // namespace

PrimusConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  PrimusConfig c;
  if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
  using Setter = void (*)(const nlohmann::json&, PrimusConfig&);
  static const std::map<std::string, Setter> setters{
      {"preset", [](const nlohmann::json&, PrimusConfig&) {}},
      {"layers", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "layers", c.layers); }},
      {"heads", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "heads", c.heads); }},
      {"embed_dim", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "embed_dim", c.embed_dim); }},
      {"patch_size", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "patch_size", c.patch_size); }},
      {"input_patch",
       [](const nlohmann::json& j, PrimusConfig& c) {
         if (j.at("input_patch").is_string()) {
           c.input_patch = parse_dims(j.at("input_patch").get<std::string>());
         } else {
           read_field(j, "input_patch", c.input_patch);
         }
       }},
      {"in_channels", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "in_channels", c.in_channels); }},
      {"num_classes", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "num_classes", c.num_classes); }},
      {"mlp_hidden", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "mlp_hidden", c.mlp_hidden); }},
      {"use_lpe", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "use_lpe", c.use_lpe); }},
      {"use_rope", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "use_rope", c.use_rope); }},
      {"rope_fov", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "rope_fov", c.rope_fov); }},
      {"rope_base", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "rope_base", c.rope_base); }},
      {"layer_scale", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "layer_scale", c.layer_scale); }},
      {"layer_scale_init",
       [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "layer_scale_init", c.layer_scale_init); }},
      {"post_attn_norm",
       [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "post_attn_norm", c.post_attn_norm); }},
      {"drop_path", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "drop_path", c.drop_path); }},
      {"attn_dropout", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "attn_dropout", c.attn_dropout); }},
      {"proj_dropout", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "proj_dropout", c.proj_dropout); }},
      {"register_tokens",
       [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "register_tokens", c.register_tokens); }},
      {"decoder_schedule",
       [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "decoder_schedule", c.decoder_schedule); }},
      {"decoder_norm", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "decoder_norm", c.decoder_norm); }},
      {"norm_eps", [](const nlohmann::json& j, PrimusConfig& c) { read_field(j, "norm_eps", c.norm_eps); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown model config key '" + key + "'");
    it->second(j, c);
  }
  // A serialized default schedule is stored explicitly; keep it explicit only if it differs.
  if (c.decoder_schedule == default_decoder_schedule(c.embed_dim, c.patch_size)) c.decoder_schedule.clear();
  if (c.mlp_hidden == c.embed_dim * 8 / 3) c.mlp_hidden = 0;
  c.validate();
  return c;
}

Dims3 parse_dims(const std::string& text) {
  Dims3 d{};
  std::size_t pos = 0;
  int axis = 0;
  try {
    while (axis < 3) {
      std::size_t used = 0;
      const unsigned long v = std::stoul(text.substr(pos), &used);
      d[axis++] = v;
      pos += used;
      if (pos >= text.size()) break;
      if (text[pos] != 'x' && text[pos] != 'X') throw ConfigError("");
      ++pos;
    }
  } catch (const std::exception&) {
    throw ConfigError("cannot parse dims '" + text + "', expected ZxYxX");
  }
  if (pos < text.size() || (axis != 1 && axis != 3)) throw ConfigError("cannot parse dims '" + text + "', expected ZxYxX");
  if (axis == 1) d[1] = d[2] = d[0];
  for (auto v : d)
    if (v == 0) throw ConfigError("dims must be >= 1: '" + text + "'");
  return d;
}

}  // namespace primus
