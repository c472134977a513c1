#include "primus/model/volume.hpp"

#include <algorithm>
#include <fstream>

#include "primus/model/binary_io.hpp"

namespace primus {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kF32 = 0;
constexpr std::uint32_t kU16 = 1;

void write_header(std::ostream& os, std::uint32_t channels, const Dims3& d, std::uint32_t dtype) {
  os.write("PVL1", 4);
  for (std::uint32_t v : {kVersion, channels, std::uint32_t(d[0]), std::uint32_t(d[1]), std::uint32_t(d[2]), dtype}) {
    io::put(os, v);
  }
}

struct Header {
  std::uint32_t channels;
  Dims3 dims;
  std::uint32_t dtype;
};

Header read_header(std::istream& is, const std::string& path) {
  io::expect_magic(is, "PVL1", path);
  const auto version = io::get<std::uint32_t>(is, path);
  if (version != kVersion) throw FormatError(path + ": unsupported PVL1 version " + std::to_string(version));
  Header h{};
  h.channels = io::get<std::uint32_t>(is, path);
  for (auto& d : h.dims) d = io::get<std::uint32_t>(is, path);
  h.dtype = io::get<std::uint32_t>(is, path);
  if (h.channels == 0 || voxel_count(h.dims) == 0) throw FormatError(path + ": zero-sized volume");
  return h;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return is;
}

}  // namespace

std::string to_string(const Dims3& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

Volume::Volume(std::size_t channels, Dims3 dims, float fill)
    : channels(channels), dims(dims), data(channels * voxel_count(dims), fill) {}

LabelVolume::LabelVolume(Dims3 dims, std::uint16_t fill) : dims(dims), labels(voxel_count(dims), fill) {}

std::uint16_t LabelVolume::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

void validate_labels(const LabelVolume& v, std::size_t num_classes) {
  if (!v.labels.empty() && v.max_label() >= num_classes) {
    throw ShapeError("label " + std::to_string(v.max_label()) + " out of range for " + std::to_string(num_classes) +
                     " classes");
  }
}

void write_volume(const std::string& path, const Volume& v) {
  auto os = open_out(path);
  write_header(os, std::uint32_t(v.channels), v.dims, kF32);
  io::put_array(os, v.data.data(), v.data.size());
}

void write_labels(const std::string& path, const LabelVolume& v) {
  auto os = open_out(path);
  write_header(os, 1, v.dims, kU16);
  io::put_array(os, v.labels.data(), v.labels.size());
}

Volume read_volume(const std::string& path) {
  auto is = open_in(path);
  const Header h = read_header(is, path);
  if (h.dtype != kF32) throw FormatError(path + ": expected an f32 image volume");
  Volume v(h.channels, h.dims);
  io::get_array(is, v.data.data(), v.data.size(), path);
  return v;
}

LabelVolume read_labels(const std::string& path) {
  auto is = open_in(path);
  const Header h = read_header(is, path);
  if (h.dtype != kU16 || h.channels != 1) throw FormatError(path + ": expected a single-channel u16 label volume");
  LabelVolume v(h.dims);
  io::get_array(is, v.labels.data(), v.labels.size(), path);
  return v;
}

}  // namespace primus
