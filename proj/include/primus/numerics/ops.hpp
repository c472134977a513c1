#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <type_traits>
#include <vector>

#include "primus/numerics/tape.hpp"
#include "primus/numerics/tensor.hpp"

// Differentiable operations on Var. Every op records its backward closure on the
// tape of its first argument. Broadcasting is limited to what the model needs:
// `add`/`mul` accept a right operand whose shape is a trailing suffix of the left
// operand's shape (bias, LayerScale, positional table); `matmul` broadcasts batch
// dimensions numpy-style.
namespace primus {

using Stride3 = std::array<std::size_t, 3>;

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);

// x[b, ...] * factors[b]; factors are constants (DropPath masks).
template <typename T>
Var<T> scale_per_sample(const Var<T>& x, const std::vector<T>& factors);

template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

// a[..., m, k] x b[..., k, n] -> [..., m, n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

// x[..., in] * w[out, in]^T + bias[out]; bias may be absent.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
Var<T> transpose_last2(const Var<T>& x);

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

// Selects entries `index` along `axis`.
template <typename T>
Var<T> index_select(const Var<T>& x, std::size_t axis, const std::vector<std::size_t>& index);
// Inverse of index_select: places x's slices at `index` in a zero tensor of extent `size`.
template <typename T>
Var<T> index_scatter(const Var<T>& x, std::size_t axis, const std::vector<std::size_t>& index,
                     std::size_t size);

template <typename T>
Var<T> softmax(const Var<T>& x);
template <typename T>
Var<T> log_softmax(const Var<T>& x);

// Normalizes over `axis` (default: last). gamma/beta have length shape[axis].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6),
                  std::optional<std::size_t> axis = std::nullopt);

template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> silu(const Var<T>& x);
template <typename T>
Var<T> gelu(const Var<T>& x);

// x[b, c, z, y, x], w[o, c, kz, ky, kx] -> [b, o, z', y', x'] with z' = (z - kz) / sz + 1.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias, Stride3 stride);

// Adjoint of conv3d in its input: x[b, o, ...], w[o, c, kz, ky, kx] -> [b, c, (z-1)*sz+kz, ...].
template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias,
                        Stride3 stride);

}  // namespace primus
