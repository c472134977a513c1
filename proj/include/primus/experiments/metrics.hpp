#pragma once

#include <cstdint>
#include <vector>

#include "primus/model/volume.hpp"
#include "primus/numerics/tape.hpp"

namespace primus {

struct DiceScore {
  std::vector<double> per_class;  // foreground classes 1..C-1
  double mean = 0;
};

// Hard Dice per foreground class; a class absent from both volumes scores 1.
// Throws ShapeError on mismatched dims, ConfigError when num_classes < 2.
DiceScore dice(const LabelVolume& pred, const LabelVolume& ref, std::size_t num_classes);

// Element-wise average of several scores (same class count).
DiceScore average(const std::vector<DiceScore>& scores);

struct LossOptions {
  double ce_weight = 1.0;
  double dice_weight = 1.0;
  double smooth = 1e-5;
};

// Softmax cross-entropy (weighted voxel mean) plus soft-Dice loss
// 1 - mean over (sample, foreground class) of (2 I + s) / (S + s).
// scores [B, C, Z, Y, X]; labels has B*Z*Y*X entries. Optional voxel weights
// (same layout) restrict both terms, e.g. to unmasked tokens.
template <typename T>
Var<T> segmentation_loss(const Var<T>& scores, const std::vector<std::uint16_t>& labels, const LossOptions& opt = {},
                         const std::vector<T>* voxel_weights = nullptr);

}  // namespace primus
