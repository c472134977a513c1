#include "primus/model/masking.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace primus {

MaskStrategy parse_mask_strategy(const std::string& name) {
  if (name == "structured") return MaskStrategy::structured;
  if (name == "random") return MaskStrategy::random;
  throw ConfigError("unknown mask strategy '" + name + "' (expected structured|random)");
}

std::string to_string(MaskStrategy s) { return s == MaskStrategy::structured ? "structured" : "random"; }

std::size_t kept_count(std::size_t n, double sparsity) {
  if (!(sparsity >= 0 && sparsity < 1)) throw ConfigError("mask sparsity must be in [0, 1), got " + std::to_string(sparsity));
  const auto k = static_cast<std::size_t>(std::llround((1.0 - sparsity) * double(n)));
  if (k == 0) throw ConfigError("mask sparsity " + std::to_string(sparsity) + " keeps no tokens out of " + std::to_string(n));
  return std::min(k, n);
}

MaskPlan plan_mask(const Dims3& grid, MaskStrategy strategy, double sparsity, std::mt19937_64& rng) {
  const std::size_t n = voxel_count(grid), k = kept_count(n, sparsity);
  MaskPlan plan;
  if (k == n) {
    plan.kept.resize(n);
    std::iota(plan.kept.begin(), plan.kept.end(), std::size_t{0});
    return plan;
  }
  if (strategy == MaskStrategy::random) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    plan.kept.assign(all.begin(), all.begin() + std::ptrdiff_t(k));
    std::sort(plan.kept.begin(), plan.kept.end());
    return plan;
  }
  const int axis = std::uniform_int_distribution<int>(0, 2)(rng);
  const std::size_t slices = grid[axis], per_slice = n / slices;
  const std::size_t full = k / per_slice, rest = k % per_slice;
  const std::size_t span = full + (rest ? 1 : 0);  // slices touched
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, slices - span)(rng);
  // The partial slice sits on either side of the full run when both fit.
  std::size_t slab = start, partial = start + full;
  if (rest && full > 0 && std::bernoulli_distribution(0.5)(rng)) {
    partial = start;
    slab = start + 1;
  }
  plan.axis = axis;
  plan.slab_start = slab;
  plan.full_slices = full;
  plan.partial_slice = partial;
  plan.partial_count = rest;

  auto slice_of = [&](std::size_t idx) {
    const std::size_t z = idx / (grid[1] * grid[2]), y = (idx / grid[2]) % grid[1], x = idx % grid[2];
    return axis == 0 ? z : axis == 1 ? y : x;
  };
  std::vector<std::size_t> partial_members;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = slice_of(i);
    if (s >= slab && s < slab + full) plan.kept.push_back(i);
    else if (rest && s == partial) partial_members.push_back(i);
  }
  std::shuffle(partial_members.begin(), partial_members.end(), rng);
  plan.kept.insert(plan.kept.end(), partial_members.begin(), partial_members.begin() + std::ptrdiff_t(rest));
  std::sort(plan.kept.begin(), plan.kept.end());
  return plan;
}

namespace {

using Kept = std::vector<std::vector<std::size_t>>;

void check_kept(const Kept& kept, std::size_t batch, std::size_t n, const char* op) {
  if (kept.size() != batch) throw DimensionError(std::string(op) + ": kept sets for " + std::to_string(kept.size()) + " samples, batch is " + std::to_string(batch));
  for (const auto& k : kept) {
    if (k.size() != kept.front().size()) throw DimensionError(std::string(op) + ": kept sets must share one size");
    for (std::size_t i : k)
      if (i >= n) throw DimensionError(std::string(op) + ": kept index " + std::to_string(i) + " out of range " + std::to_string(n));
  }
}

}  // namespace

template <typename T>
Var<T> gather_tokens(const Var<T>& x, const Kept& kept) {
  const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
  check_kept(kept, B, N, "gather_tokens");
  const std::size_t K = kept.front().size();
  Tensor<T> out({B, K, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < K; ++j)
      std::copy_n(x.value().ptr() + (b * N + kept[b][j]) * D, D, out.ptr() + (b * K + j) * D);
  auto idx = std::make_shared<Kept>(kept);
  return x.tape().record("gather_tokens", std::move(out), {x}, [x, idx, B, N, K, D](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    T* dx = tape.grad_data(x);
    if (!dx) return;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < K; ++j) {
        const T* src = g.ptr() + (b * K + j) * D;
        T* dst = dx + (b * N + (*idx)[b][j]) * D;
        for (std::size_t c = 0; c < D; ++c) dst[c] += src[c];
      }
  });
}

template <typename T>
Var<T> scatter_tokens(const Var<T>& x, const Kept& kept, std::size_t n) {
  const std::size_t B = x.dim(0), K = x.dim(1), D = x.dim(2);
  check_kept(kept, B, n, "scatter_tokens");
  if (kept.front().size() != K) throw DimensionError("scatter_tokens: kept size does not match token count");
  Tensor<T> out({B, n, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < K; ++j)
      std::copy_n(x.value().ptr() + (b * K + j) * D, D, out.ptr() + (b * n + kept[b][j]) * D);
  auto idx = std::make_shared<Kept>(kept);
  return x.tape().record("scatter_tokens", std::move(out), {x}, [x, idx, B, n, K, D](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    T* dx = tape.grad_data(x);
    if (!dx) return;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < K; ++j) {
        const T* src = g.ptr() + (b * n + (*idx)[b][j]) * D;
        T* dst = dx + (b * K + j) * D;
        for (std::size_t c = 0; c < D; ++c) dst[c] += src[c];
      }
  });
}

template <typename T>
TokenSequence<T> mask_tokens(const TokenSequence<T>& t, const Kept& kept) {
  const std::size_t N = t.length();
  TokenSequence<T> out{gather_tokens(t.tokens, kept), t.grid, {}};
  for (std::size_t b = 0; b < kept.size(); ++b)
    for (std::size_t i : kept[b]) out.coords.push_back(t.coords[b * N + i]);
  return out;
}

template <typename T>
TokenSequence<T> mask_tokens(const TokenSequence<T>& t, MaskStrategy strategy, double sparsity, std::mt19937_64& rng,
                             Kept* kept_out) {
  if (t.length() != voxel_count(t.grid)) throw ShapeError("mask_tokens needs the full grid without register tokens");
  Kept kept;
  for (std::size_t b = 0; b < t.batch(); ++b) kept.push_back(plan_mask(t.grid, strategy, sparsity, rng).kept);
  TokenSequence<T> out = mask_tokens(t, kept);
  if (kept_out) *kept_out = std::move(kept);
  return out;
}

#define PRIMUS_INSTANTIATE_MASK(T)                                                                       \
  template Var<T> gather_tokens(const Var<T>&, const Kept&);                                             \
  template Var<T> scatter_tokens(const Var<T>&, const Kept&, std::size_t);                               \
  template TokenSequence<T> mask_tokens(const TokenSequence<T>&, const Kept&);                           \
  template TokenSequence<T> mask_tokens(const TokenSequence<T>&, MaskStrategy, double, std::mt19937_64&, Kept*);

PRIMUS_INSTANTIATE_MASK(float)
PRIMUS_INSTANTIATE_MASK(double)

}  // namespace primus
