#include "primus/model/tokenizer.hpp"

#include <bit>

#include "primus/numerics/ops.hpp"

namespace primus {

std::vector<Coord> grid_coords(const Dims3& g) {
  std::vector<Coord> out;
  out.reserve(voxel_count(g));
  for (std::size_t z = 0; z < g[0]; ++z)
    for (std::size_t y = 0; y < g[1]; ++y)
      for (std::size_t x = 0; x < g[2]; ++x) out.push_back({int(z), int(y), int(x)});
  return out;
}

template <typename T>
TokenSequence<T> tokenize(const Var<T>& x, const PatchEmbedWeights<T>& w, std::size_t k) {
  if (x.shape().size() != 5) throw ShapeError("tokenize expects [B, C, Z, Y, X], got " + to_string(x.shape()));
  Dims3 grid{};
  for (int i = 0; i < 3; ++i) {
    const std::size_t d = x.dim(2 + i);
    if (d % k) {
      const std::size_t pad = k - d % k;
      throw ShapeError("volume dim " + std::to_string(d) + " on axis " + "zyx"[i] + " is not divisible by patch size " +
                       std::to_string(k) + "; pad by " + std::to_string(pad) + " to " + std::to_string(d + pad));
    }
    grid[i] = d / k;
  }
  Tape<T>& tape = x.tape();
  const std::size_t B = x.dim(0), D = w.w.dim(0), N = voxel_count(grid);
  Var<T> y = conv3d(x, tape.param(w.w), tape.param(w.b), {k, k, k});
  Var<T> tokens = permute(reshape(y, {B, D, N}), {0, 2, 1});
  std::vector<Coord> one = grid_coords(grid), coords;
  coords.reserve(B * N);
  for (std::size_t b = 0; b < B; ++b) coords.insert(coords.end(), one.begin(), one.end());
  return {tokens, grid, std::move(coords)};
}

Tensor<float> tokenize(const Volume& v, const PatchEmbedWeights<float>& w, std::size_t k) {
  Tape<float> tape(false);
  auto x = tape.constant(Tensor<float>({1, v.channels, v.dims[0], v.dims[1], v.dims[2]}, v.data));
  TokenSequence<float> t = tokenize(x, w, k);
  return t.tokens.value().reshaped({t.length(), t.embed_dim()});
}

template <typename T>
Var<T> decode(const TokenSequence<T>& t, const DecoderWeights<T>& w, std::size_t k, T eps) {
  if (!std::has_single_bit(k) || w.stages.size() != std::size_t(std::countr_zero(k))) {
    throw ConfigError("decoder has " + std::to_string(w.stages.size()) + " stride-2 stages whose product does not equal patch size " +
                      std::to_string(k));
  }
  if (t.length() != voxel_count(t.grid)) {
    throw ShapeError("decode needs the full token grid " + to_string(t.grid) + ", got " + std::to_string(t.length()) +
                     " tokens");
  }
  Tape<T>& tape = t.tokens.tape();
  const std::size_t B = t.batch(), D = t.embed_dim();
  Var<T> h = reshape(permute(t.tokens, {0, 2, 1}), {B, D, t.grid[0], t.grid[1], t.grid[2]});
  for (const auto& s : w.stages) {
    h = conv_transpose3d(h, tape.param(s.w), tape.param(s.b), {2, 2, 2});
    if (s.norm.enabled()) h = layer_norm(h, tape.param(s.norm.gamma), tape.param(s.norm.beta), eps, std::size_t{1});
    h = gelu(h);
  }
  return conv3d(h, tape.param(w.head_w), tape.param(w.head_b), {1, 1, 1});
}

template TokenSequence<float> tokenize(const Var<float>&, const PatchEmbedWeights<float>&, std::size_t);
template TokenSequence<double> tokenize(const Var<double>&, const PatchEmbedWeights<double>&, std::size_t);
template Var<float> decode(const TokenSequence<float>&, const DecoderWeights<float>&, std::size_t, float);
template Var<double> decode(const TokenSequence<double>&, const DecoderWeights<double>&, std::size_t, double);

}  // namespace primus
