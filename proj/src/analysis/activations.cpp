#include "primus/analysis/activations.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "primus/analysis/cka.hpp"
#include "primus/model/binary_io.hpp"

namespace primus {

namespace {
constexpr std::uint32_t kVersion = 1;
}

const std::vector<Tensor<float>>& ActivationRecord::layer(const std::string& tag) const {
  auto it = layers.find(tag);
  if (it == layers.end()) throw DomainError("activation record has no layer '" + tag + "'");
  return it->second;
}

std::vector<Tensor<double>> ActivationRecord::layer_f64(const std::string& tag) const {
  std::vector<Tensor<double>> out;
  for (const auto& m : layer(tag)) out.push_back(m.cast<double>());
  return out;
}

ActivationRecord capture_activations(const PrimusModel<float>& model, const std::vector<Volume>& probes, std::size_t batch_size,
                                     const std::string& probe_id, std::uint64_t seed) {
  if (batch_size < 4) throw DomainError("activation capture needs batch size >= 4 for unbiased HSIC");
  const std::size_t batches = probes.size() / batch_size;
  if (batches == 0) {
    throw DomainError("activation capture: " + std::to_string(probes.size()) + " probes do not fill one batch of " +
                      std::to_string(batch_size));
  }
  ActivationRecord rec;
  rec.batch_count = batches;
  rec.n = batch_size;
  rec.probe_id = probe_id;
  rec.seed = seed;
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<const Volume*> vols;
    for (std::size_t i = 0; i < batch_size; ++i) vols.push_back(&probes[b * batch_size + i]);
    ForwardOptions<float> opt;
    opt.capture = [&](const std::string& tag, const Var<float>& v) {
      if (b == 0) rec.tags.push_back(tag);
      rec.layers[tag].push_back(v.value().reshaped({batch_size, v.value().size() / batch_size}));
    };
    Tape<float> tape(false);
    model.forward(tape, stack_volumes(vols), opt);
  }
  return rec;
}

void save_activations(const std::string& path, const ActivationRecord& rec) {
  nlohmann::json mats = nlohmann::json::array();
  std::size_t offset = 0;
  std::vector<const Tensor<float>*> order;
  for (const auto& tag : rec.tags) {
    const auto& list = rec.layer(tag);
    for (std::size_t b = 0; b < list.size(); ++b) {
      mats.push_back({{"tag", tag}, {"batch", b}, {"shape", list[b].shape()}, {"offset", offset}});
      offset += list[b].size();
      order.push_back(&list[b]);
    }
  }
  const nlohmann::json manifest{{"tags", rec.tags},         {"batch_count", rec.batch_count}, {"n", rec.n},
                                {"probe_id", rec.probe_id}, {"seed", rec.seed},               {"matrices", mats}};
  const std::string text = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write("PACT", 4);
  io::put(os, kVersion);
  io::put(os, std::uint64_t(text.size()));
  os.write(text.data(), std::streamsize(text.size()));
  for (const auto* m : order) io::put_array(os, m->ptr(), m->size());
  if (!os) throw Error("failed writing " + path);
}

ActivationRecord load_activations(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  io::expect_magic(is, "PACT", path);
  const auto version = io::get<std::uint32_t>(is, path);
  if (version != kVersion) throw FormatError(path + ": unsupported PACT version " + std::to_string(version));
  const auto len = io::get<std::uint64_t>(is, path);
  if (len > (std::uint64_t(1) << 32)) throw FormatError(path + ": implausible manifest length");
  std::string text(len, '\0');
  io::get_array(is, text.data(), len, path + " manifest");
  ActivationRecord rec;
  try {
    const auto m = nlohmann::json::parse(text);
    rec.tags = m.at("tags").get<std::vector<std::string>>();
    rec.batch_count = m.at("batch_count").get<std::size_t>();
    rec.n = m.at("n").get<std::size_t>();
    rec.probe_id = m.at("probe_id").get<std::string>();
    rec.seed = m.at("seed").get<std::uint64_t>();
    std::size_t offset = 0;
    for (const auto& e : m.at("matrices")) {
      if (e.at("offset").get<std::size_t>() != offset) throw FormatError(path + ": non-contiguous matrix offsets");
      Tensor<float> t(e.at("shape").get<Shape>());
      io::get_array(is, t.ptr(), t.size(), path + " data");
      offset += t.size();
      rec.layers[e.at("tag").get<std::string>()].push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad manifest: " + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(path + ": bad matrix shape: " + e.what());
  }
  for (const auto& tag : rec.tags)
    if (rec.layer(tag).size() != rec.batch_count) throw FormatError(path + ": layer '" + tag + "' has the wrong batch count");
  return rec;
}

std::vector<LayerCka> cka_per_layer(const ActivationRecord& a, const ActivationRecord& b) {
  std::vector<LayerCka> out;
  for (const auto& tag : a.tags) {
    if (!b.layers.count(tag)) continue;
    out.push_back({tag, minibatch_cka(a.layer_f64(tag), b.layer_f64(tag))});
  }
  if (out.empty()) throw DomainError("activation records share no layer tags");
  return out;
}

}  // namespace primus
