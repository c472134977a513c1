#include "primus/experiments/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "primus/experiments/json_fields.hpp"
#include "primus/model/config.hpp"
#include "primus/numerics/errors.hpp"

namespace primus {

TaskKind parse_task_kind(const std::string& name) {
  if (name == "blobs") return TaskKind::blobs;
  if (name == "position_dependent") return TaskKind::position_dependent;
  if (name == "small_lesions") return TaskKind::small_lesions;
  throw ConfigError("unknown task kind '" + name + "' (expected blobs, position_dependent or small_lesions)");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::blobs:
      return "blobs";
    case TaskKind::position_dependent:
      return "position_dependent";
    case TaskKind::small_lesions:
      return "small_lesions";
  }
  return "?";
}

void SyntheticTask::validate() const {
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("task.dims must be positive");
  }
  if (num_classes < 2) throw ConfigError("task.num_classes must be >= 2");
  if (noise_std < 0) throw ConfigError("task.noise_std must be >= 0");
  if (!(radius_min > 0) || radius_max < radius_min) throw ConfigError("task radius range must satisfy 0 < min <= max");
  if (count_min == 0 || count_max < count_min) throw ConfigError("task count range must satisfy 1 <= min <= max");
  if (max_retries == 0) throw ConfigError("task.max_retries must be >= 1");
  switch (kind) {
    case TaskKind::blobs:
      if (num_classes > 4) throw ConfigError("blobs supports 1 to 3 foreground classes");
      break;
    case TaskKind::position_dependent:
      if (num_classes != 3) throw ConfigError("position_dependent needs num_classes == 3");
      if (dims[2] < 2 || dims[2] % 2 != 0) throw ConfigError("position_dependent needs an even x extent");
      break;
    case TaskKind::small_lesions:
      if (num_classes != 2) throw ConfigError("small_lesions needs num_classes == 2");
      if (vessel_count_max < vessel_count_min) throw ConfigError("task vessel count range is inverted");
      if (vessel_radius <= 0) throw ConfigError("task.vessel_radius must be positive");
      break;
  }
}

SyntheticTask make_task(TaskKind kind, Dims3 dims, std::uint64_t seed) {
  SyntheticTask t;
  t.kind = kind;
  t.dims = dims;
  t.seed = seed;
  switch (kind) {
    case TaskKind::blobs:
      t.radius_max = std::min(6.0, *std::min_element(dims.begin(), dims.end()) / 4.0);
      t.radius_min = 0.5 * t.radius_max;
      break;
    case TaskKind::position_dependent:
      t.num_classes = 3;
      t.radius_max = std::min(5.0, dims[2] / 4.0 - 1.0);
      t.radius_min = 0.6 * t.radius_max;
      t.count_min = t.count_max = 1;
      break;
    case TaskKind::small_lesions:
      t.radius_min = 1.0;
      t.radius_max = 2.0;
      t.count_min = 1;
      t.count_max = 5;
      break;
  }
  return t;
}

nlohmann::json to_json(const SyntheticTask& t) {
  return {
      {"kind", to_string(t.kind)},
      {"dims", to_string(t.dims)},
      {"num_classes", t.num_classes},
      {"noise_std", t.noise_std},
      {"seed", t.seed},
      {"radius_min", t.radius_min},
      {"radius_max", t.radius_max},
      {"count_min", t.count_min},
      {"count_max", t.count_max},
      {"vessel_count_min", t.vessel_count_min},
      {"vessel_count_max", t.vessel_count_max},
      {"vessel_radius", t.vessel_radius},
      {"min_class_voxels", t.min_class_voxels},
      {"max_retries", t.max_retries},
  };
}

SyntheticTask task_from_json(const nlohmann::json& j) {
  using namespace json_fields;
  const std::string sec = "task";
  check_keys(j, sec,
             {"kind", "dims", "num_classes", "noise_std", "seed", "radius_min", "radius_max", "count_min", "count_max",
              "vessel_count_min", "vessel_count_max", "vessel_radius", "min_class_voxels", "max_retries"});
  std::string kind = "blobs";
  read_optional(j, sec, "kind", kind);
  Dims3 dims{24, 24, 24};
  if (j.contains("dims")) {
    if (j.at("dims").is_string()) {
      dims = parse_dims(j.at("dims").get<std::string>());
    } else {
      read_optional(j, sec, "dims", dims);
    }
  }
  SyntheticTask t = make_task(parse_task_kind(kind), dims);
  read_optional(j, sec, "num_classes", t.num_classes);
  read_optional(j, sec, "noise_std", t.noise_std);
  read_optional(j, sec, "seed", t.seed);
  read_optional(j, sec, "radius_min", t.radius_min);
  read_optional(j, sec, "radius_max", t.radius_max);
  read_optional(j, sec, "count_min", t.count_min);
  read_optional(j, sec, "count_max", t.count_max);
  read_optional(j, sec, "vessel_count_min", t.vessel_count_min);
  read_optional(j, sec, "vessel_count_max", t.vessel_count_max);
  read_optional(j, sec, "vessel_radius", t.vessel_radius);
  read_optional(j, sec, "min_class_voxels", t.min_class_voxels);
  read_optional(j, sec, "max_retries", t.max_retries);
  t.validate();
  return t;
}

namespace {

using Point = std::array<double, 3>;

class Canvas {
 public:
  Canvas(const Dims3& dims) : dims_(dims), label_(dims), occupied_(voxel_count(dims), 0), intensity_(voxel_count(dims), 0.0f) {}

  const Dims3& dims() const { return dims_; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * dims_[1] + y) * dims_[2] + x; }

  // Calls f(z, y, x) for every voxel inside the axis-aligned ellipsoid (semi-axes r) around c.
  template <typename F>
  void for_ellipsoid(const Point& c, const Point& r, F&& f) const {
    std::array<std::size_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      double l = std::ceil(c[a] - r[a]);
      double h = std::floor(c[a] + r[a]);
      lo[a] = static_cast<std::size_t>(std::max(0.0, l));
      hi[a] = static_cast<std::size_t>(std::clamp(h, -1.0, static_cast<double>(dims_[a]) - 1.0) + 1.0);
    }
    for (std::size_t z = lo[0]; z < hi[0]; ++z) {
      for (std::size_t y = lo[1]; y < hi[1]; ++y) {
        for (std::size_t x = lo[2]; x < hi[2]; ++x) {
          double dz = (z - c[0]) / r[0], dy = (y - c[1]) / r[1], dx = (x - c[2]) / r[2];
          if (dz * dz + dy * dy + dx * dx <= 1.0) f(z, y, x);
        }
      }
    }
  }

  bool is_free(const Point& c, const Point& r) const {
    bool free = true;
    for_ellipsoid(c, r, [&](std::size_t z, std::size_t y, std::size_t x) { free = free && !occupied_[index(z, y, x)]; });
    return free;
  }

  void paint(const Point& c, const Point& r, std::uint16_t label, float value) {
    for_ellipsoid(c, r, [&](std::size_t z, std::size_t y, std::size_t x) {
      std::size_t i = index(z, y, x);
      occupied_[i] = 1;
      label_.labels[i] = label;
      intensity_[i] = value;
    });
  }

  LabelVolume& label() { return label_; }
  std::vector<float>& intensity() { return intensity_; }

 private:
  Dims3 dims_;
  LabelVolume label_;
  std::vector<std::uint8_t> occupied_;
  std::vector<float> intensity_;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_count(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Places one shape without overlap, or throws after max_retries attempts.
// `centre_range(axis, radius)` gives the admissible [lo, hi] for the centre coordinate.
template <typename Range>
void place(Canvas& canvas, std::mt19937_64& rng, const Point& radii, std::uint16_t label, float value,
           std::size_t max_retries, const std::string& what, Range&& centre_range) {
  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    Point c{};
    bool feasible = true;
    for (int a = 0; a < 3; ++a) {
      auto [lo, hi] = centre_range(a, radii[a]);
      if (hi < lo) {
        feasible = false;
        break;
      }
      c[a] = uniform(rng, lo, hi);
    }
    if (!feasible) break;
    if (canvas.is_free(c, radii)) {
      canvas.paint(c, radii, label, value);
      return;
    }
  }
  throw GenerationError("could not place " + what + " without overlap after " + std::to_string(max_retries) + " attempts");
}

void draw_blobs(const SyntheticTask& t, Canvas& canvas, std::mt19937_64& rng) {
  auto inside = [&](int a, double r) { return std::pair<double, double>(r, t.dims[a] - 1.0 - r); };
  for (std::uint16_t c = 1; c < t.num_classes; ++c) {
    std::size_t n = uniform_count(rng, t.count_min, t.count_max);
    for (std::size_t i = 0; i < n; ++i) {
      Point r{uniform(rng, t.radius_min, t.radius_max), uniform(rng, t.radius_min, t.radius_max),
              uniform(rng, t.radius_min, t.radius_max)};
      place(canvas, rng, r, c, static_cast<float>(c), t.max_retries, "class " + std::to_string(c) + " blob", inside);
    }
  }
}

void draw_position_dependent(const SyntheticTask& t, Canvas& canvas, std::mt19937_64& rng) {
  const double half = t.dims[2] / 2.0;
  for (std::uint16_t side = 0; side < 2; ++side) {
    double r = uniform(rng, t.radius_min, t.radius_max);
    // Left sphere: every voxel has x <= half - 1; right sphere: every voxel has x >= half.
    // Strict margins keep the two admissible ranges mirror images of each other.
    auto range = [&](int a, double rad) {
      if (a != 2) return std::pair<double, double>(rad, t.dims[a] - 1.0 - rad);
      if (side == 0) return std::pair<double, double>(rad, half - 1.0 - rad);
      return std::pair<double, double>(half + rad, t.dims[2] - 1.0 - rad);
    };
    place(canvas, rng, Point{r, r, r}, static_cast<std::uint16_t>(side + 1), 1.0f, t.max_retries,
          side == 0 ? "left sphere" : "right sphere", range);
  }
}

void draw_vessel(const SyntheticTask& t, Canvas& canvas, std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, 0.12);
  Point p{}, target{};
  int face = static_cast<int>(uniform_count(rng, 0, 5));
  for (int a = 0; a < 3; ++a) {
    p[a] = uniform(rng, 0.0, t.dims[a] - 1.0);
    target[a] = uniform(rng, 0.25 * (t.dims[a] - 1.0), 0.75 * (t.dims[a] - 1.0));
  }
  p[face / 2] = (face % 2) ? t.dims[face / 2] - 1.0 : 0.0;
  Point dir{target[0] - p[0], target[1] - p[1], target[2] - p[2]};
  const Point rad{t.vessel_radius, t.vessel_radius, t.vessel_radius};
  const std::size_t max_steps = 8 * (t.dims[0] + t.dims[1] + t.dims[2]);
  for (std::size_t step = 0; step < max_steps; ++step) {
    double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    for (double& d : dir) d /= norm;
    canvas.paint(p, rad, 0, 1.0f);
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      p[a] += 0.5 * dir[a];
      dir[a] += jitter(rng);
      inside = inside && p[a] >= -0.5 && p[a] <= t.dims[a] - 0.5;
    }
    if (!inside) break;
  }
}

void draw_small_lesions(const SyntheticTask& t, Canvas& canvas, std::mt19937_64& rng) {
  std::size_t vessels = uniform_count(rng, t.vessel_count_min, t.vessel_count_max);
  for (std::size_t v = 0; v < vessels; ++v) draw_vessel(t, canvas, rng);
  std::size_t n = uniform_count(rng, t.count_min, t.count_max);
  auto inside = [&](int a, double r) { return std::pair<double, double>(r, t.dims[a] - 1.0 - r); };
  for (std::size_t i = 0; i < n; ++i) {
    double r = uniform(rng, t.radius_min, t.radius_max);
    // A one-voxel clearance keeps lesions from merging into vessels or each other.
    Point probe{r + 1.0, r + 1.0, r + 1.0};
    bool placed = false;
    for (std::size_t attempt = 0; attempt < t.max_retries && !placed; ++attempt) {
      Point c{};
      for (int a = 0; a < 3; ++a) {
        auto [lo, hi] = inside(a, r);
        if (hi < lo) throw GenerationError("lesion radius exceeds the volume");
        c[a] = uniform(rng, lo, hi);
      }
      if (canvas.is_free(c, probe)) {
        canvas.paint(c, Point{r, r, r}, 1, 1.0f);
        placed = true;
      }
    }
    if (!placed) {
      throw GenerationError("could not place lesion " + std::to_string(i + 1) + " after " +
                            std::to_string(t.max_retries) + " attempts");
    }
  }
}

bool has_all_classes(const LabelVolume& label, std::size_t num_classes, std::size_t min_voxels) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::uint16_t l : label.labels) ++counts[l];
  return std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c >= min_voxels; });
}

}  // namespace

Sample generate_sample(const SyntheticTask& task, std::uint64_t index, Split split) {
  task.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(task.seed), static_cast<std::uint32_t>(task.seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t attempt = 0; attempt < task.max_retries; ++attempt) {
    Canvas canvas(task.dims);
    switch (task.kind) {
      case TaskKind::blobs:
        draw_blobs(task, canvas, rng);
        break;
      case TaskKind::position_dependent:
        draw_position_dependent(task, canvas, rng);
        break;
      case TaskKind::small_lesions:
        draw_small_lesions(task, canvas, rng);
        break;
    }
    if (!has_all_classes(canvas.label(), task.num_classes, task.min_class_voxels)) continue;
    Sample s;
    s.label = std::move(canvas.label());
    s.image = Volume(1, task.dims);
    s.image.data = std::move(canvas.intensity());
    if (task.noise_std > 0) {
      std::normal_distribution<double> noise(0.0, task.noise_std);
      for (float& v : s.image.data) v = static_cast<float>(v + noise(rng));
    }
    return s;
  }
  throw GenerationError("sample " + std::to_string(index) + " lacks a declared class after " +
                        std::to_string(task.max_retries) + " redraws");
}

std::uint64_t sample_hash(const Sample& s, std::uint64_t h) {
  auto feed = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(s.image.data.data(), s.image.data.size() * sizeof(float));
  feed(s.label.labels.data(), s.label.labels.size() * sizeof(std::uint16_t));
  return h;
}

Sample crop(const Sample& s, const Dims3& origin, const Dims3& size) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] + size[a] > s.label.dims[a]) {
      throw ShapeError("crop " + to_string(size) + " at " + to_string(origin) + " exceeds " + to_string(s.label.dims));
    }
  }
  Sample out;
  out.image = Volume(s.image.channels, size);
  out.label = LabelVolume(size);
  for (std::size_t z = 0; z < size[0]; ++z) {
    for (std::size_t y = 0; y < size[1]; ++y) {
      for (std::size_t x = 0; x < size[2]; ++x) {
        for (std::size_t c = 0; c < s.image.channels; ++c) {
          out.image.at(c, z, y, x) = s.image.at(c, origin[0] + z, origin[1] + y, origin[2] + x);
        }
        out.label.at(z, y, x) = s.label.at(origin[0] + z, origin[1] + y, origin[2] + x);
      }
    }
  }
  return out;
}

}  // namespace primus
