#pragma once

#include <string>

#include "primus/model/model.hpp"

namespace primus {

// PCK1: "PCK1", u32 version, u64 manifest length, JSON manifest
// {config, tensors: [{name, shape, offset}], identity_blocks}, then f32 data
// in manifest order. Offsets count floats from the start of the data section.
void save_checkpoint(const std::string& path, const PrimusModel<float>& model);
PrimusModel<float> load_checkpoint(const std::string& path);

}  // namespace primus
