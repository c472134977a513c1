#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "primus/model/config.hpp"
#include "primus/model/model.hpp"

namespace primus {

struct ParamCounts {
  std::size_t total = 0;
  std::size_t tr = 0;      // inside active Transformer blocks
  std::size_t non_tr = 0;  // tokenizer, registers, decoder, head
  std::size_t lpe = 0;     // learnable positional table
};

// Closed form from the config alone; `identity_blocks` blocks are excluded.
ParamCounts count_params(const PrimusConfig& cfg, std::size_t identity_blocks = 0);

// Walk over the instantiated tensors (identity-replaced blocks excluded).
template <typename T>
ParamCounts count_params(const PrimusModel<T>& model);

// Parameters of one block (norms, biases and LayerScale included).
std::size_t block_params(const PrimusConfig& cfg);

inline constexpr double kDefaultUnetReference = 30e6;

// non_tr / reference. Throws DomainError for reference <= 0.
double unet_index(double non_tr_params, double reference = kDefaultUnetReference);

struct FlopConvention {
  double per_elementwise = 5.0;  // norms, activations, softmax, rotary embedding
};

struct FlopRow {
  std::string name;
  double flops = 0;
  bool transformer = false;
};

struct FlopEstimate {
  double total = 0;
  double tr = 0;
  std::vector<FlopRow> rows;
  double tr_fraction() const { return total > 0 ? tr / total : 0.0; }
  double row(const std::string& name) const;
};

// Closed-form forward FLOPs for one sample: 2 per MAC for convolutions and
// matmuls (QK^T and AV each 2*N^2*d per layer), `per_elementwise` per element
// for norms/activations/softmax/rotations. Throws ShapeError for non-divisible dims.
FlopEstimate estimate_flops(const PrimusConfig& cfg, const Dims3& input_patch, const FlopConvention& conv = {},
                            std::size_t identity_blocks = 0);

struct ArchitectureReport {
  std::string name;
  Dims3 input_patch{};
  ParamCounts params;
  double unet_reference = kDefaultUnetReference;
  double unet_index = 0;
  FlopEstimate flops;
};

ArchitectureReport make_report(const PrimusConfig& cfg, const Dims3& input_patch, double unet_reference = kDefaultUnetReference,
                               const std::string& name = "", std::size_t identity_blocks = 0);

nlohmann::json report_to_json(const ArchitectureReport& r);
std::string report_to_text(const ArchitectureReport& r);

}  // namespace primus
