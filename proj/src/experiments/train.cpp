#include "primus/experiments/train.hpp"

#include <cmath>
#include <random>

#include "primus/experiments/json_fields.hpp"
#include "primus/experiments/optim.hpp"
#include "primus/model/masking.hpp"
#include "primus/numerics/errors.hpp"

namespace primus {

void TrainRecipe::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("recipe.lr must be finite and >= 0");
  if (weight_decay < 0) throw ConfigError("recipe.weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("recipe betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("recipe.eps must be positive");
  if (!(grad_clip_norm > 0)) throw ConfigError("recipe.grad_clip_norm must be positive");
  if (poly_power < 0) throw ConfigError("recipe.poly_power must be >= 0");
  if (steps_per_epoch == 0 || epochs == 0) throw ConfigError("recipe needs at least one step");
  if (batch_size == 0) throw ConfigError("recipe.batch_size must be >= 1");
  if (eval_samples == 0) throw ConfigError("recipe.eval_samples must be >= 1");
  if (mask_strategy != "none") {
    parse_mask_strategy(mask_strategy);
    if (!(mask_sparsity > 0 && mask_sparsity < 1)) throw ConfigError("recipe.mask_sparsity must lie in (0, 1) when masking");
  }
}

nlohmann::json to_json(const TrainRecipe& r) {
  return {
      {"lr", r.lr},
      {"weight_decay", r.weight_decay},
      {"beta1", r.beta1},
      {"beta2", r.beta2},
      {"eps", r.eps},
      {"grad_clip_norm", r.grad_clip_norm},
      {"poly_power", r.poly_power},
      {"steps_per_epoch", r.steps_per_epoch},
      {"epochs", r.epochs},
      {"batch_size", r.batch_size},
      {"seed", r.seed},
      {"eval_interval", r.eval_interval},
      {"eval_samples", r.eval_samples},
      {"ce_weight", r.ce_weight},
      {"dice_weight", r.dice_weight},
      {"mask_strategy", r.mask_strategy},
      {"mask_sparsity", r.mask_sparsity},
  };
}

TrainRecipe recipe_from_json(const nlohmann::json& j) {
  using namespace json_fields;
  const std::string sec = "recipe";
  check_keys(j, sec,
             {"lr", "weight_decay", "beta1", "beta2", "eps", "grad_clip_norm", "poly_power", "steps_per_epoch", "epochs",
              "batch_size", "seed", "eval_interval", "eval_samples", "ce_weight", "dice_weight", "mask_strategy",
              "mask_sparsity"});
  TrainRecipe r;
  read_optional(j, sec, "lr", r.lr);
  read_optional(j, sec, "weight_decay", r.weight_decay);
  read_optional(j, sec, "beta1", r.beta1);
  read_optional(j, sec, "beta2", r.beta2);
  read_optional(j, sec, "eps", r.eps);
  read_optional(j, sec, "grad_clip_norm", r.grad_clip_norm);
  read_optional(j, sec, "poly_power", r.poly_power);
  read_optional(j, sec, "steps_per_epoch", r.steps_per_epoch);
  read_optional(j, sec, "epochs", r.epochs);
  read_optional(j, sec, "batch_size", r.batch_size);
  read_optional(j, sec, "seed", r.seed);
  read_optional(j, sec, "eval_interval", r.eval_interval);
  read_optional(j, sec, "eval_samples", r.eval_samples);
  read_optional(j, sec, "ce_weight", r.ce_weight);
  read_optional(j, sec, "dice_weight", r.dice_weight);
  read_optional(j, sec, "mask_strategy", r.mask_strategy);
  read_optional(j, sec, "mask_sparsity", r.mask_sparsity);
  r.validate();
  return r;
}

namespace {

void check_tiling(const PrimusConfig& cfg, const Dims3& dims) {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] % cfg.input_patch[a] != 0) {
      throw ShapeError("task dims " + to_string(dims) + " are not a multiple of the model input patch " +
                       to_string(cfg.input_patch));
    }
  }
}

LabelVolume argmax_labels(const Tensor<float>& scores, std::size_t b, const Dims3& dims) {
  const std::size_t C = scores.dim(1), V = voxel_count(dims);
  LabelVolume out(dims);
  const float* s = scores.ptr() + b * C * V;
  for (std::size_t v = 0; v < V; ++v) {
    std::uint16_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (s[c * V + v] > s[best * V + v]) best = static_cast<std::uint16_t>(c);
    }
    out.labels[v] = best;
  }
  return out;
}

// Voxel weights that keep only voxels inside kept tokens.
std::vector<float> kept_voxel_weights(const std::vector<std::vector<std::size_t>>& keep, const Dims3& grid,
                                      std::size_t k, const Dims3& dims) {
  const std::size_t V = voxel_count(dims);
  std::vector<float> w(keep.size() * V, 0.0f);
  for (std::size_t b = 0; b < keep.size(); ++b) {
    for (std::size_t token : keep[b]) {
      const std::size_t gz = token / (grid[1] * grid[2]), gy = (token / grid[2]) % grid[1], gx = token % grid[2];
      for (std::size_t z = gz * k; z < (gz + 1) * k; ++z)
        for (std::size_t y = gy * k; y < (gy + 1) * k; ++y)
          for (std::size_t x = gx * k; x < (gx + 1) * k; ++x) w[b * V + (z * dims[1] + y) * dims[2] + x] = 1.0f;
    }
  }
  return w;
}

}  // namespace

nlohmann::json eval_record(std::size_t step, const DiceScore& s) {
  return {{"eval_step", step}, {"per_class_dsc", s.per_class}, {"mean_dsc", s.mean}};
}

LabelVolume predict(const PrimusModel<float>& model, const Volume& image) {
  const PrimusConfig& cfg = model.config();
  check_tiling(cfg, image.dims);
  const Dims3 tile = cfg.input_patch;
  const Dims3 n{image.dims[0] / tile[0], image.dims[1] / tile[1], image.dims[2] / tile[2]};
  std::vector<Volume> tiles;
  std::vector<Dims3> origins;
  for (std::size_t tz = 0; tz < n[0]; ++tz)
    for (std::size_t ty = 0; ty < n[1]; ++ty)
      for (std::size_t tx = 0; tx < n[2]; ++tx) {
        const Dims3 o{tz * tile[0], ty * tile[1], tx * tile[2]};
        Volume v(image.channels, tile);
        for (std::size_t c = 0; c < image.channels; ++c)
          for (std::size_t z = 0; z < tile[0]; ++z)
            for (std::size_t y = 0; y < tile[1]; ++y)
              for (std::size_t x = 0; x < tile[2]; ++x) v.at(c, z, y, x) = image.at(c, o[0] + z, o[1] + y, o[2] + x);
        tiles.push_back(std::move(v));
        origins.push_back(o);
      }
  std::vector<const Volume*> ptrs;
  for (const Volume& v : tiles) ptrs.push_back(&v);
  Tape<float> tape(false);
  Var<float> scores = model.forward(tape, stack_volumes(ptrs));
  LabelVolume out(image.dims);
  out.spacing = image.spacing;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    LabelVolume part = argmax_labels(scores.value(), t, tile);
    const Dims3& o = origins[t];
    for (std::size_t z = 0; z < tile[0]; ++z)
      for (std::size_t y = 0; y < tile[1]; ++y)
        for (std::size_t x = 0; x < tile[2]; ++x) out.at(o[0] + z, o[1] + y, o[2] + x) = part.at(z, y, x);
  }
  return out;
}

DiceScore evaluate(const PrimusModel<float>& model, const SyntheticTask& task, std::size_t n, Split split) {
  std::vector<DiceScore> scores;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = generate_sample(task, i, split);
    scores.push_back(dice(predict(model, s.image), s.label, task.num_classes));
  }
  return average(scores);
}

TrainResult train(PrimusModel<float>& model, const SyntheticTask& task, const TrainRecipe& recipe, const TrainHooks& hooks) {
  recipe.validate();
  task.validate();
  const PrimusConfig& cfg = model.config();
  check_tiling(cfg, task.dims);
  if (cfg.num_classes != task.num_classes) {
    throw ConfigError("model has " + std::to_string(cfg.num_classes) + " classes, task has " +
                      std::to_string(task.num_classes));
  }
  const bool cropping = cfg.input_patch != task.dims;
  const bool masking = recipe.mask_strategy != "none";
  const MaskStrategy strategy = masking ? parse_mask_strategy(recipe.mask_strategy) : MaskStrategy::random;

  std::vector<Tensor<float>*> params;
  for (auto& p : model.parameters()) {
    if (p.active) params.push_back(p.tensor);
  }
  AdamW opt(AdamWOptions{recipe.beta1, recipe.beta2, recipe.eps, recipe.weight_decay});
  LossOptions loss_opt{recipe.ce_weight, recipe.dice_weight, 1e-5};
  std::mt19937_64 rng(recipe.seed);

  TrainResult result;
  result.data_hash = 0xcbf29ce484222325ULL;
  auto emit = [&](nlohmann::json rec) {
    if (hooks.on_record) hooks.on_record(rec);
    result.log.push_back(std::move(rec));
  };

  const std::size_t total = recipe.total_steps();
  for (std::size_t step = 0; step < total; ++step) {
    std::vector<Sample> batch;
    for (std::size_t i = 0; i < recipe.batch_size; ++i) {
      Sample s = generate_sample(task, step * recipe.batch_size + i, Split::train);
      result.data_hash = sample_hash(s, result.data_hash);
      if (cropping) {
        Dims3 origin{};
        for (int a = 0; a < 3; ++a) {
          origin[a] = std::uniform_int_distribution<std::size_t>(0, task.dims[a] - cfg.input_patch[a])(rng);
        }
        s = crop(s, origin, cfg.input_patch);
      }
      batch.push_back(std::move(s));
    }
    std::vector<const Volume*> images;
    std::vector<std::uint16_t> labels;
    for (const Sample& s : batch) {
      images.push_back(&s.image);
      labels.insert(labels.end(), s.label.labels.begin(), s.label.labels.end());
    }

    std::vector<std::vector<std::size_t>> keep;
    std::vector<float> weights;
    ForwardOptions<float> fo;
    fo.train = true;
    fo.rng = &rng;
    if (masking) {
      for (std::size_t b = 0; b < batch.size(); ++b) keep.push_back(plan_mask(cfg.grid(), strategy, recipe.mask_sparsity, rng).kept);
      weights = kept_voxel_weights(keep, cfg.grid(), cfg.patch_size, cfg.input_patch);
      fo.keep = &keep;
    }

    Tape<float> tape;
    Var<float> scores = model.forward(tape, stack_volumes(images), fo);
    Var<float> loss = segmentation_loss(scores, labels, loss_opt, masking ? &weights : nullptr);
    const double loss_value = loss.value().item();
    if (!std::isfinite(loss_value)) throw NumericalError("non-finite loss at step " + std::to_string(step));
    tape.backward(loss);

    std::vector<Tensor<float>> grads;
    grads.reserve(params.size());
    for (Tensor<float>* p : params) grads.push_back(tape.grad_of(*p));
    const double raw_norm = clip_grad_norm(grads, recipe.grad_clip_norm);
    if (!std::isfinite(raw_norm)) throw NumericalError("non-finite gradient norm at step " + std::to_string(step));
    const double lr = poly_lr(recipe.lr, step, total, recipe.poly_power);
    opt.step(params, grads, lr);

    emit({{"step", step}, {"loss", loss_value}, {"lr", lr}, {"grad_norm", global_norm(grads)}, {"grad_norm_raw", raw_norm}});
    if (hooks.on_step) hooks.on_step(step, model);
    const bool last = step + 1 == total;
    if (last || (recipe.eval_interval && (step + 1) % recipe.eval_interval == 0)) {
      DiceScore s = evaluate(model, task, recipe.eval_samples);
      if (last) result.final_eval = s;
      emit(eval_record(step + 1, s));
    }
  }
  return result;
}

}  // namespace primus
