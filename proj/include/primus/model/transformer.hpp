#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "primus/model/posenc.hpp"
#include "primus/model/weights.hpp"
#include "primus/numerics/tape.hpp"

namespace primus {

struct BlockOptions {
  std::size_t heads = 1;
  double eps = 1e-6;
  double drop_path = 0.0;
  double attn_dropout = 0.0;
  double proj_dropout = 0.0;
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when train and any rate > 0
  const Rope3D* rope = nullptr;    // null disables rotary embedding
};

// Multi-head self-attention on x [B, N, d] followed by the output projection
// (and projection dropout in train mode). coords has B*N entries.
template <typename T>
Var<T> attention(const Var<T>& x, const BlockWeights<T>& w, const std::vector<Coord>& coords, const BlockOptions& o);

// W_out * LN_h(silu(W_gate x) * (W_val x)).
template <typename T>
Var<T> eva02_mlp(const Var<T>& x, const BlockWeights<T>& w, double eps = 1e-6);

// Per-sample stochastic depth on x [B, ...]. Rates >= 1 drop every sample.
template <typename T>
Var<T> drop_path(const Var<T>& x, double rate, bool train, std::mt19937_64* rng);

// Elementwise inverted dropout.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, bool train, std::mt19937_64* rng);

// x + DropPath(ls_attn * PAN(Attn(LN1(x)))), then + DropPath(ls_mlp * MLP(LN2(x))).
template <typename T>
Var<T> primus_block(const Var<T>& x, const BlockWeights<T>& w, const std::vector<Coord>& coords, const BlockOptions& o);

}  // namespace primus
