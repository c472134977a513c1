#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "primus/model/model.hpp"
#include "primus/model/volume.hpp"
#include "primus/numerics/tensor.hpp"

namespace primus {

// Per-layer activation matrices, one [n, p] matrix per (tag, batch).
struct ActivationRecord {
  std::vector<std::string> tags;  // capture order
  std::size_t batch_count = 0;
  std::size_t n = 0;
  std::string probe_id;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<Tensor<float>>> layers;

  const std::vector<Tensor<float>>& layer(const std::string& tag) const;
  // Widened copy for CKA.
  std::vector<Tensor<double>> layer_f64(const std::string& tag) const;
  bool operator==(const ActivationRecord&) const = default;
};

// Runs the model in eval mode over consecutive batches of `probes` and records
// "tokens", "block_<i>" and "pre_decoder". A trailing partial batch is dropped.
// Throws DomainError when batch_size < 4 or no full batch exists.
ActivationRecord capture_activations(const PrimusModel<float>& model, const std::vector<Volume>& probes, std::size_t batch_size,
                                     const std::string& probe_id = "", std::uint64_t seed = 0);

// PACT: "PACT", u32 version, u64 manifest length, JSON manifest
// {tags, batch_count, n, probe_id, seed, matrices: [{tag, batch, shape, offset}]}, f32 data.
void save_activations(const std::string& path, const ActivationRecord& rec);
ActivationRecord load_activations(const std::string& path);

struct LayerCka {
  std::string tag;
  double cka;
};

// Same-index pairing: CKA for every tag present in both records, in a's order.
std::vector<LayerCka> cka_per_layer(const ActivationRecord& a, const ActivationRecord& b);

}  // namespace primus
