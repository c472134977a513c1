#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace primus {

using Dims3 = std::array<std::size_t, 3>;  // (z, y, x)

inline std::size_t voxel_count(const Dims3& d) { return d[0] * d[1] * d[2]; }
std::string to_string(const Dims3& d);

// Image volume: channel-major, then z, y, x row-major.
struct Volume {
  std::size_t channels = 1;
  Dims3 dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume() = default;
  Volume(std::size_t channels, Dims3 dims, float fill = 0.0f);
  float& at(std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
    return data[((c * dims[0] + z) * dims[1] + y) * dims[2] + x];
  }
  float at(std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return data[((c * dims[0] + z) * dims[1] + y) * dims[2] + x];
  }
};

struct LabelVolume {
  Dims3 dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<std::uint16_t> labels;

  LabelVolume() = default;
  explicit LabelVolume(Dims3 dims, std::uint16_t fill = 0);
  std::uint16_t& at(std::size_t z, std::size_t y, std::size_t x) { return labels[(z * dims[1] + y) * dims[2] + x]; }
  std::uint16_t at(std::size_t z, std::size_t y, std::size_t x) const { return labels[(z * dims[1] + y) * dims[2] + x]; }
  std::uint16_t max_label() const;
};

// Throws ShapeError if any label is >= num_classes.
void validate_labels(const LabelVolume& v, std::size_t num_classes);

// PVL1 on-disk format: "PVL1", u32 [version=1, channels, z, y, x, dtype], payload.
// dtype 0 = f32 image, 1 = u16 labels. All little-endian.
void write_volume(const std::string& path, const Volume& v);
void write_labels(const std::string& path, const LabelVolume& v);
Volume read_volume(const std::string& path);
LabelVolume read_labels(const std::string& path);

}  // namespace primus
