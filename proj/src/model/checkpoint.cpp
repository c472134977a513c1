#include "primus/model/checkpoint.hpp"

#include <fstream>

#include "primus/model/binary_io.hpp"

namespace primus {

namespace {
constexpr std::uint32_t kVersion = 1;
}

void save_checkpoint(const std::string& path, const PrimusModel<float>& model) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  const auto params = model.parameters();
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor->shape()}, {"offset", offset}});
    offset += p.tensor->size();
  }
  std::vector<bool> ids = model.identity_blocks();
  const nlohmann::json manifest{{"config", to_json(model.config())}, {"tensors", tensors}, {"identity_blocks", ids}};
  const std::string text = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write("PCK1", 4);
  io::put(os, kVersion);
  io::put(os, std::uint64_t(text.size()));
  os.write(text.data(), std::streamsize(text.size()));
  for (const auto& p : params) io::put_array(os, p.tensor->ptr(), p.tensor->size());
  if (!os) throw Error("failed writing " + path);
}

PrimusModel<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  io::expect_magic(is, "PCK1", path);
  const auto version = io::get<std::uint32_t>(is, path);
  if (version != kVersion) throw FormatError(path + ": unsupported PCK1 version " + std::to_string(version));
  const auto len = io::get<std::uint64_t>(is, path);
  if (len > (std::uint64_t(1) << 32)) throw FormatError(path + ": implausible manifest length");
  std::string text(len, '\0');
  io::get_array(is, text.data(), len, path + " manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad manifest: " + e.what());
  }
  PrimusModel<float> model = PrimusModel<float>::zeros(config_from_json(manifest.at("config")));
  auto params = model.parameters();
  const auto& entries = manifest.at("tensors");
  if (entries.size() != params.size()) throw FormatError(path + ": tensor count does not match the config");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != params[i].name || e.at("shape").get<Shape>() != params[i].tensor->shape() ||
        e.at("offset").get<std::size_t>() != offset) {
      throw FormatError(path + ": manifest entry " + std::to_string(i) + " (" + e.at("name").get<std::string>() +
                        ") does not match the model layout");
    }
    io::get_array(is, params[i].tensor->ptr(), params[i].tensor->size(), path + " tensor data");
    offset += params[i].tensor->size();
  }
  const auto ids = manifest.at("identity_blocks").get<std::vector<bool>>();
  for (std::size_t i = 0; i < ids.size(); ++i) model.set_identity(i, ids[i]);
  return model;
}

}  // namespace primus
