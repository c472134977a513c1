#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "primus/numerics/errors.hpp"

// Little-endian primitives shared by the PVL1, PCK1 and PACT formats.
namespace primus::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated " + what);
  return v;
}

template <typename T>
void put_array(std::ostream& os, const T* data, std::size_t n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
void get_array(std::istream& is, T* data, std::size_t n, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)))) {
    throw FormatError("truncated " + what);
  }
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& path) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(path + ": bad magic, expected " + std::string(magic, 4));
  }
}

}  // namespace primus::io
