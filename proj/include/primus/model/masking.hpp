#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "primus/model/tokenizer.hpp"

namespace primus {

enum class MaskStrategy { structured, random };
MaskStrategy parse_mask_strategy(const std::string& name);
std::string to_string(MaskStrategy s);

struct MaskPlan {
  std::vector<std::size_t> kept;  // ascending grid indices
  int axis = -1;                  // structured: slab axis (0=z, 1=y, 2=x)
  std::size_t slab_start = 0;     // first full slice of the slab
  std::size_t full_slices = 0;
  std::size_t partial_slice = 0;  // index of the partially kept slice (when partial_count > 0)
  std::size_t partial_count = 0;
};

// Number of tokens kept: round((1 - sparsity) * n). Throws ConfigError if sparsity
// is outside [0, 1) or the count rounds to zero.
std::size_t kept_count(std::size_t n, double sparsity);

// Chooses the kept token set on a grid. Structured: a random axis, a contiguous run
// of whole slices, plus tokens from one neighbouring slice to hit the count exactly.
// Random: a uniform subset of fixed size.
MaskPlan plan_mask(const Dims3& grid, MaskStrategy strategy, double sparsity, std::mt19937_64& rng);

// Per-sample gather of token rows: x [B, N, d] -> [B, K, d] with kept[b] of size K.
template <typename T>
Var<T> gather_tokens(const Var<T>& x, const std::vector<std::vector<std::size_t>>& kept);

// Inverse of gather_tokens: zeros at dropped positions, output [B, n, d].
template <typename T>
Var<T> scatter_tokens(const Var<T>& x, const std::vector<std::vector<std::size_t>>& kept, std::size_t n);

// Applies one independently drawn plan per sample; coordinates travel with the tokens.
template <typename T>
TokenSequence<T> mask_tokens(const TokenSequence<T>& t, MaskStrategy strategy, double sparsity, std::mt19937_64& rng,
                             std::vector<std::vector<std::size_t>>* kept_out = nullptr);

// Same, with the kept sets given.
template <typename T>
TokenSequence<T> mask_tokens(const TokenSequence<T>& t, const std::vector<std::vector<std::size_t>>& kept);

}  // namespace primus
