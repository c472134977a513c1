#pragma once

#include <cstddef>
#include <vector>

#include "primus/model/volume.hpp"
#include "primus/model/weights.hpp"
#include "primus/numerics/tape.hpp"

namespace primus {

// Grid coordinate of a token; register tokens carry kSentinel.
struct Coord {
  int z = 0, y = 0, x = 0;
  bool operator==(const Coord&) const = default;
};
inline constexpr Coord kSentinel{-1, -1, -1};

// Row-major enumeration of a token grid (z slowest).
std::vector<Coord> grid_coords(const Dims3& grid);

// Batched token sequence: tokens [B, N, d]; coords holds B*N entries, sample-major,
// because masking may keep different positions per sample.
template <typename T>
struct TokenSequence {
  Var<T> tokens;
  Dims3 grid{};
  std::vector<Coord> coords;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t length() const { return tokens.dim(1); }
  std::size_t embed_dim() const { return tokens.dim(2); }
  const Coord* sample_coords(std::size_t b) const { return coords.data() + b * length(); }
};

// Strided patch embedding: x [B, C, Z, Y, X] -> tokens on the (Z/k, Y/k, X/k) grid.
// Throws ShapeError naming the required padding when a dim is not divisible by k.
template <typename T>
TokenSequence<T> tokenize(const Var<T>& x, const PatchEmbedWeights<T>& w, std::size_t k);

// Single-volume convenience: returns [N, d] tokens without recording gradients.
Tensor<float> tokenize(const Volume& v, const PatchEmbedWeights<float>& w, std::size_t k);

// Transposed-convolution decoder. `t` must hold exactly the full grid (registers
// stripped). Each stage upsamples by 2; the stage count must equal log2(k).
// Returns raw class scores [B, num_classes, gz*k, gy*k, gx*k].
template <typename T>
Var<T> decode(const TokenSequence<T>& t, const DecoderWeights<T>& w, std::size_t k, T eps = T(1e-6));

}  // namespace primus
