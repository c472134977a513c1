#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "primus/experiments/metrics.hpp"
#include "primus/experiments/synthetic.hpp"
#include "primus/model/model.hpp"

namespace primus {

struct TrainRecipe {
  double lr = 3e-4;
  double weight_decay = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double grad_clip_norm = 1.0;
  double poly_power = 0.9;
  std::size_t steps_per_epoch = 250;
  std::size_t epochs = 8;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;

  std::size_t eval_interval = 0;  // steps between evaluations; 0 evaluates once at the end
  std::size_t eval_samples = 32;

  double ce_weight = 1.0;
  double dice_weight = 1.0;

  // Token masking during training: "none", "structured" or "random".
  std::string mask_strategy = "none";
  double mask_sparsity = 0.0;

  std::size_t total_steps() const { return steps_per_epoch * epochs; }
  void validate() const;
  bool operator==(const TrainRecipe&) const = default;
};

nlohmann::json to_json(const TrainRecipe& r);
// Strict: unknown keys are rejected; missing keys keep their defaults.
TrainRecipe recipe_from_json(const nlohmann::json& j);

struct TrainHooks {
  // Receives every metrics record as it is produced.
  std::function<void(const nlohmann::json&)> on_record;
  // Called after the optimizer update of each step (0-based).
  std::function<void(std::size_t step, const PrimusModel<float>&)> on_step;
};

struct TrainResult {
  std::vector<nlohmann::json> log;
  DiceScore final_eval;
  std::uint64_t data_hash = 0;  // FNV chain over every generated training sample
};

// Trains in place with AdamW, global-norm clipping and polynomial LR decay.
// When the model's input patch is smaller than the task volume, training uses
// random crops and evaluation tiles the volume. Throws ShapeError when the task
// dims are not a multiple of the input patch, NumericalError on a non-finite loss.
TrainResult train(PrimusModel<float>& model, const SyntheticTask& task, const TrainRecipe& recipe,
                  const TrainHooks& hooks = {});

// Arg-max labels; non-overlapping tiles when the image is a multiple of the input patch.
LabelVolume predict(const PrimusModel<float>& model, const Volume& image);

// Mean DSC over the first n samples of `split`.
DiceScore evaluate(const PrimusModel<float>& model, const SyntheticTask& task, std::size_t n,
                   Split split = Split::heldout);

nlohmann::json eval_record(std::size_t step, const DiceScore& s);

}  // namespace primus
