#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "primus/numerics/errors.hpp"

namespace primus::json_fields {

// Rejects non-objects and keys outside `allowed`.
inline void check_keys(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw ConfigError("unknown key '" + section + "." + key + "'");
  }
}

// Reads j[key] into `out` when present; type errors become ConfigError.
template <typename V>
void read_optional(const nlohmann::json& j, const std::string& section, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

}  // namespace primus::json_fields
