#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "primus/model/volume.hpp"

namespace primus {

enum class TaskKind { blobs, position_dependent, small_lesions };
TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

// Which sample stream to draw from. Held-out samples never coincide with training ones.
enum class Split : std::uint32_t { train = 0, heldout = 1 };

struct SyntheticTask {
  TaskKind kind = TaskKind::blobs;
  Dims3 dims{24, 24, 24};
  std::size_t num_classes = 2;
  double noise_std = 0.1;
  std::uint64_t seed = 0;

  // Shape radii (blobs: ellipsoid semi-axes; position_dependent: spheres; small_lesions: lesions).
  double radius_min = 3.0;
  double radius_max = 6.0;
  // Shapes per foreground class (blobs) or lesions per sample (small_lesions).
  std::size_t count_min = 1;
  std::size_t count_max = 2;
  // small_lesions distractors.
  std::size_t vessel_count_min = 2;
  std::size_t vessel_count_max = 4;
  double vessel_radius = 0.75;

  // Every declared class must cover at least this many voxels; otherwise the sample is redrawn.
  std::size_t min_class_voxels = 1;
  std::size_t max_retries = 64;

  // Throws ConfigError on inconsistent fields (e.g. position_dependent needs 3 classes).
  void validate() const;
  bool operator==(const SyntheticTask&) const = default;
};

// Kind-specific defaults for radii, counts and class count at the given dims.
SyntheticTask make_task(TaskKind kind, Dims3 dims, std::uint64_t seed = 0);

nlohmann::json to_json(const SyntheticTask& task);
// Strict: unknown keys are rejected. Missing keys take make_task(kind, dims) defaults.
SyntheticTask task_from_json(const nlohmann::json& j);

struct Sample {
  Volume image;
  LabelVolume label;
};

// Deterministic in (task, index, split).
//  blobs: non-overlapping axis-aligned ellipsoids; class c has intensity c.
//  position_dependent: one sphere of intensity 1 per x-half; left half is class 1, right half class 2.
//  small_lesions: lesion spheres (class 1) and curvilinear vessels (class 0), both of intensity 1.
// Gaussian noise of noise_std is added to the image. Throws GenerationError when shapes
// cannot be placed within max_retries attempts.
Sample generate_sample(const SyntheticTask& task, std::uint64_t index, Split split = Split::train);

// FNV-1a over image and label bytes, chained from `h`.
std::uint64_t sample_hash(const Sample& s, std::uint64_t h = 0xcbf29ce484222325ULL);

// Copies the sub-block starting at `origin` with extent `size`.
Sample crop(const Sample& s, const Dims3& origin, const Dims3& size);

}  // namespace primus
