#include "primus/model/transformer.hpp"

#include <cmath>

#include "primus/numerics/ops.hpp"

namespace primus {

namespace {

template <typename T>
Var<T> apply_linear(const Var<T>& x, const LinearWeights<T>& w) {
  Tape<T>& tape = x.tape();
  return linear(x, tape.param(w.w), tape.param(w.b));
}

template <typename T>
Var<T> apply_norm(const Var<T>& x, const NormWeights<T>& w, double eps) {
  Tape<T>& tape = x.tape();
  return layer_norm(x, tape.param(w.gamma), tape.param(w.beta), T(eps));
}

std::mt19937_64& need_rng(std::mt19937_64* rng, const char* what) {
  if (!rng) throw ConfigError(std::string(what) + " in train mode needs an rng");
  return *rng;
}

}  // namespace

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, bool train, std::mt19937_64* rng) {
  if (!train || rate <= 0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  auto& g = need_rng(rng, "dropout");
  Tensor<T> mask(x.shape());
  const T s = T(1.0 / (1.0 - rate));
  for (auto& m : mask.data()) m = keep(g) ? s : T(0);
  return mul(x, x.tape().constant(std::move(mask)));
}

template <typename T>
Var<T> drop_path(const Var<T>& x, double rate, bool train, std::mt19937_64* rng) {
  if (!train || rate <= 0) return x;
  std::vector<T> factors(x.dim(0), T(0));
  if (rate < 1) {
    std::bernoulli_distribution keep(1.0 - rate);
    auto& g = need_rng(rng, "drop_path");
    for (auto& f : factors) f = keep(g) ? T(1.0 / (1.0 - rate)) : T(0);
  }
  return scale_per_sample(x, factors);
}

template <typename T>
Var<T> attention(const Var<T>& x, const BlockWeights<T>& w, const std::vector<Coord>& coords, const BlockOptions& o) {
  const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2), H = o.heads, hd = D / H;
  // [B, N, 3d] -> [3, B, H, N, hd]
  Var<T> qkv = permute(reshape(apply_linear(x, w.qkv), {B, N, 3, H, hd}), {2, 0, 3, 1, 4});
  Var<T> q = reshape(slice(qkv, 0, 0, 1), {B, H, N, hd});
  Var<T> k = reshape(slice(qkv, 0, 1, 1), {B, H, N, hd});
  Var<T> v = reshape(slice(qkv, 0, 2, 1), {B, H, N, hd});
  if (o.rope) {
    q = apply_rope3d(q, coords, *o.rope);
    k = apply_rope3d(k, coords, *o.rope);
  }
  Var<T> logits = scale(matmul(q, transpose_last2(k)), T(1.0 / std::sqrt(double(hd))));
  Var<T> attn = dropout(softmax(logits), o.attn_dropout, o.train, o.rng);
  Var<T> ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {B, N, D});
  return dropout(apply_linear(ctx, w.proj), o.proj_dropout, o.train, o.rng);
}

template <typename T>
Var<T> eva02_mlp(const Var<T>& x, const BlockWeights<T>& w, double eps) {
  Var<T> h = mul(silu(apply_linear(x, w.gate)), apply_linear(x, w.val));
  return apply_linear(apply_norm(h, w.inner, eps), w.out);
}

template <typename T>
Var<T> primus_block(const Var<T>& x, const BlockWeights<T>& w, const std::vector<Coord>& coords, const BlockOptions& o) {
  Tape<T>& tape = x.tape();
  Var<T> a = attention(apply_norm(x, w.norm1, o.eps), w, coords, o);
  if (w.pan.enabled()) a = apply_norm(a, w.pan, o.eps);
  if (!w.ls_attn.empty()) a = mul(a, tape.param(w.ls_attn));
  Var<T> y = add(x, drop_path(a, o.drop_path, o.train, o.rng));
  Var<T> m = eva02_mlp(apply_norm(y, w.norm2, o.eps), w, o.eps);
  if (!w.ls_mlp.empty()) m = mul(m, tape.param(w.ls_mlp));
  return add(y, drop_path(m, o.drop_path, o.train, o.rng));
}

#define PRIMUS_INSTANTIATE_BLOCK(T)                                                                               \
  template Var<T> dropout(const Var<T>&, double, bool, std::mt19937_64*);                                         \
  template Var<T> drop_path(const Var<T>&, double, bool, std::mt19937_64*);                                       \
  template Var<T> attention(const Var<T>&, const BlockWeights<T>&, const std::vector<Coord>&, const BlockOptions&); \
  template Var<T> eva02_mlp(const Var<T>&, const BlockWeights<T>&, double);                                       \
  template Var<T> primus_block(const Var<T>&, const BlockWeights<T>&, const std::vector<Coord>&, const BlockOptions&);

PRIMUS_INSTANTIATE_BLOCK(float)
PRIMUS_INSTANTIATE_BLOCK(double)

}  // namespace primus
