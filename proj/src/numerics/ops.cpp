#include "primus/numerics/ops.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <string>

namespace primus {
namespace {

void require_suffix(const Shape& a, const Shape& b, const char* op) {
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) ok = a[a.size() - b.size() + i] == b[i];
  if (!ok) {
    throw DimensionError(std::string(op) + ": shape " + to_string(b) +
                         " is not a trailing suffix of " + to_string(a));
  }
}

// [outer, axis, inner] factorization of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, const char* name, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const std::size_t id = x.id();
  return x.tape().record(name, std::move(y), {x}, [id, df](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    T* gx = tape.grad_data(id);
    if (!gx) return;
    const Tensor<T>& xin = tape.value(Var<T>(&tape, id));
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xin[i]);
  });
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = A[i * k + p];
      const T* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// A[m,k] += C[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* C, const T* B, T* A) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* b = B + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += c[j] * b[j];
      A[i * k + p] += acc;
    }
  }
}

// B[k,n] += A[m,k]^T * C[m,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* A, const T* C, T* B) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = A[i * k + p];
      T* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) b[j] += a * c[j];
    }
  }
}

// Maps each index of the broadcast batch shape `out` to a flat index in `in`.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  const std::size_t total = numel(out);
  std::vector<std::size_t> map(total, 0);
  const std::size_t offset = out.size() - in.size();
  std::vector<std::size_t> in_stride(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  std::vector<std::size_t> idx(out.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] != 1) off += idx[offset + i] * in_stride[i];
    }
    map[flat] = off;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

struct ConvGeom {
  std::size_t batch, in_ch, z, y, x;   // conv input
  std::size_t out_ch, kz, ky, kx;
  std::size_t sz, sy, sx;
  std::size_t oz, oy, ox;              // conv output
};

ConvGeom conv_geom(const Shape& xs, const Shape& ws, Stride3 stride, const char* op) {
  if (xs.size() != 5 || ws.size() != 5) {
    throw DimensionError(std::string(op) + ": expected 5-D input and weight, got " + to_string(xs) + " and " + to_string(ws));
  }
  if (xs[1] != ws[1]) {
    throw DimensionError(std::string(op) + ": input channels of " + to_string(xs) + " do not match weight " + to_string(ws));
  }
  for (std::size_t s : stride) {
    if (s == 0) throw DimensionError(std::string(op) + ": stride must be >= 1");
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], xs[4], ws[0], ws[2], ws[3], ws[4], stride[0], stride[1], stride[2], 0, 0, 0};
  if (g.kz > g.z || g.ky > g.y || g.kx > g.x) {
    throw DimensionError(std::string(op) + ": kernel " + to_string(ws) + " larger than input " + to_string(xs));
  }
  g.oz = (g.z - g.kz) / g.sz + 1;
  g.oy = (g.y - g.ky) / g.sy + 1;
  g.ox = (g.x - g.kx) / g.sx + 1;
  return g;
}

// out[b,o,p] += sum_{c,k} w[o,c,k] * in[b,c,p*s+k]
template <typename T>
void conv_correlate(const ConvGeom& g, const T* in, const T* w, T* out) {
  const std::size_t in_plane = g.z * g.y * g.x, out_plane = g.oz * g.oy * g.ox;
  const std::size_t kvol = g.kz * g.ky * g.kx;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      T* op = out + (b * g.out_ch + o) * out_plane;
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        const T* ip = in + (b * g.in_ch + c) * in_plane;
        const T* wp = w + (o * g.in_ch + c) * kvol;
        for (std::size_t kz = 0; kz < g.kz; ++kz)
          for (std::size_t ky = 0; ky < g.ky; ++ky)
            for (std::size_t kx = 0; kx < g.kx; ++kx) {
              const T wv = wp[(kz * g.ky + ky) * g.kx + kx];
              for (std::size_t z = 0; z < g.oz; ++z)
                for (std::size_t y = 0; y < g.oy; ++y) {
                  const T* row = ip + ((z * g.sz + kz) * g.y + (y * g.sy + ky)) * g.x + kx;
                  T* orow = op + (z * g.oy + y) * g.ox;
                  for (std::size_t x = 0; x < g.ox; ++x) orow[x] += wv * row[x * g.sx];
                }
            }
      }
    }
}

// in[b,c,p*s+k] += sum_o w[o,c,k] * out[b,o,p]   (adjoint of conv_correlate in `in`)
template <typename T>
void conv_scatter(const ConvGeom& g, const T* out, const T* w, T* in) {
  const std::size_t in_plane = g.z * g.y * g.x, out_plane = g.oz * g.oy * g.ox;
  const std::size_t kvol = g.kz * g.ky * g.kx;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      const T* op = out + (b * g.out_ch + o) * out_plane;
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        T* ip = in + (b * g.in_ch + c) * in_plane;
        const T* wp = w + (o * g.in_ch + c) * kvol;
        for (std::size_t kz = 0; kz < g.kz; ++kz)
          for (std::size_t ky = 0; ky < g.ky; ++ky)
            for (std::size_t kx = 0; kx < g.kx; ++kx) {
              const T wv = wp[(kz * g.ky + ky) * g.kx + kx];
              for (std::size_t z = 0; z < g.oz; ++z)
                for (std::size_t y = 0; y < g.oy; ++y) {
                  T* row = ip + ((z * g.sz + kz) * g.y + (y * g.sy + ky)) * g.x + kx;
                  const T* orow = op + (z * g.oy + y) * g.ox;
                  for (std::size_t x = 0; x < g.ox; ++x) row[x * g.sx] += wv * orow[x];
                }
            }
      }
    }
}

// dw[o,c,k] += sum_{b,p} in[b,c,p*s+k] * out[b,o,p]
template <typename T>
void conv_weight_grad(const ConvGeom& g, const T* in, const T* out, T* dw) {
  const std::size_t in_plane = g.z * g.y * g.x, out_plane = g.oz * g.oy * g.ox;
  const std::size_t kvol = g.kz * g.ky * g.kx;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      const T* op = out + (b * g.out_ch + o) * out_plane;
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        const T* ip = in + (b * g.in_ch + c) * in_plane;
        T* wp = dw + (o * g.in_ch + c) * kvol;
        for (std::size_t kz = 0; kz < g.kz; ++kz)
          for (std::size_t ky = 0; ky < g.ky; ++ky)
            for (std::size_t kx = 0; kx < g.kx; ++kx) {
              T acc = 0;
              for (std::size_t z = 0; z < g.oz; ++z)
                for (std::size_t y = 0; y < g.oy; ++y) {
                  const T* row = ip + ((z * g.sz + kz) * g.y + (y * g.sy + ky)) * g.x + kx;
                  const T* orow = op + (z * g.oy + y) * g.ox;
                  for (std::size_t x = 0; x < g.ox; ++x) acc += row[x * g.sx] * orow[x];
                }
              wp[(kz * g.ky + ky) * g.kx + kx] += acc;
            }
      }
    }
}

// Adds bias[c] over a [batch, channels, plane] tensor, or accumulates its gradient.
template <typename T>
void add_channel_bias(T* data, const T* bias, std::size_t batch, std::size_t ch, std::size_t plane) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      T* p = data + (b * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
}

template <typename T>
void channel_bias_grad(const T* g, T* db, std::size_t batch, std::size_t ch, std::size_t plane) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const T* p = g + (b * ch + c) * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      db[c] += acc;
    }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_suffix(a.shape(), b.shape(), "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out = av;
  const std::size_t inner = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib, inner](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* ga = tape.grad_data(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (T* gb = tape.grad_data(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_suffix(a.shape(), b.shape(), "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  const std::size_t inner = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % inner];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib, inner](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const Tensor<T>& av = tape.value(Var<T>(&tape, ia));
    const Tensor<T>& bv = tape.value(Var<T>(&tape, ib));
    if (T* ga = tape.grad_data(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % inner];
    }
    if (T* gb = tape.grad_data(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record("scale", std::move(out), {a}, [ia, s](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* ga = tape.grad_data(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    }
  });
}

template <typename T>
Var<T> scale_per_sample(const Var<T>& x, const std::vector<T>& factors) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1 || xv.dim(0) != factors.size()) {
    throw DimensionError("scale_per_sample: " + std::to_string(factors.size()) + " factors for shape " + to_string(xv.shape()));
  }
  const std::size_t per = xv.size() / factors.size();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factors[i / per];
  const std::size_t ix = x.id();
  return x.tape().record("scale_per_sample", std::move(out), {x}, [ix, factors, per](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* gx = tape.grad_data(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factors[i / per];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor<T>::scalar(acc), {a}, [ia](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* ga = tape.grad_data(ia)) {
      const std::size_t n = tape.value(Var<T>(&tape, ia)).size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  }
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  Shape a_batch(as.begin(), as.end() - 2), b_batch(bs.begin(), bs.end() - 2);
  Shape out_batch(std::max(a_batch.size(), b_batch.size()), 1);
  for (std::size_t i = 0; i < out_batch.size(); ++i) {
    const std::size_t ra = i + a_batch.size() >= out_batch.size() ? a_batch[i + a_batch.size() - out_batch.size()] : 1;
    const std::size_t rb = i + b_batch.size() >= out_batch.size() ? b_batch[i + b_batch.size() - out_batch.size()] : 1;
    if (ra != rb && ra != 1 && rb != 1) {
      throw DimensionError("matmul: batch dimensions of " + to_string(as) + " and " + to_string(bs) + " do not broadcast");
    }
    out_batch[i] = std::max(ra, rb);
  }
  const auto amap = broadcast_map(out_batch, a_batch);
  const auto bmap = broadcast_map(out_batch, b_batch);
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  const T* ap = a.value().ptr();
  const T* bp = b.value().ptr();
  for (std::size_t t = 0; t < amap.size(); ++t) {
    gemm_nn(m, n, k, ap + amap[t] * m * k, bp + bmap[t] * k * n, out.ptr() + t * m * n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const T* av = tape.value(Var<T>(&tape, ia)).ptr();
    const T* bv = tape.value(Var<T>(&tape, ib)).ptr();
    T* ga = tape.grad_data(ia);
    T* gb = tape.grad_data(ib);
    for (std::size_t t = 0; t < amap.size(); ++t) {
      const T* gt = g.ptr() + t * m * n;
      if (ga) gemm_nt(m, n, k, gt, bv + bmap[t] * k * n, ga + amap[t] * m * k);
      if (gb) gemm_tn(m, n, k, av + amap[t] * m * k, gt, gb + bmap[t] * k * n);
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[1]) {
    throw DimensionError("linear: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  }
  const std::size_t in = ws[1], outf = ws[0], rows = x.value().size() / in;
  if (bias && (bias->value().size() != outf)) {
    throw DimensionError("linear: bias " + to_string(bias->shape()) + " for weight " + to_string(ws));
  }
  Shape os = xs;
  os.back() = outf;
  Tensor<T> out(os);
  const T* xp = x.value().ptr();
  const T* wp = w.value().ptr();
  const T* bp = bias ? bias->value().ptr() : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * in;
    T* yr = out.ptr() + r * outf;
    for (std::size_t o = 0; o < outf; ++o) {
      const T* wr = wp + o * in;
      T acc = bp ? bp[o] : T(0);
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  const std::size_t ix = x.id(), iw = w.id();
  const bool has_bias = bias.has_value();
  const std::size_t ib = has_bias ? bias->id() : 0;
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(*bias);
  return x.tape().record("linear", std::move(out), inputs, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const T* xv = tape.value(Var<T>(&tape, ix)).ptr();
    const T* wv = tape.value(Var<T>(&tape, iw)).ptr();
    if (T* gx = tape.grad_data(ix)) gemm_nn(rows, in, outf, g.ptr(), wv, gx);
    if (T* gw = tape.grad_data(iw)) gemm_tn(rows, in, outf, g.ptr(), xv, gw);
    if (has_bias) {
      if (T* gb = tape.grad_data(ib)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < outf; ++o) gb[o] += g[r * outf + o];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record("reshape", std::move(out), {x}, [ix](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* gx = tape.grad_data(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& xs = x.shape();
  const std::size_t r = xs.size();
  if (axes.size() != r) throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " + to_string(xs));
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis order for shape " + to_string(xs));
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * xs[i];
  Shape os(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    os[i] = xs[axes[i]];
    src_stride[i] = in_stride[axes[i]];
  }
  // offsets[j] = source offset of output element j
  const std::size_t total = x.value().size();
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> idx(r, 0);
  const std::size_t last = os.back(), last_stride = src_stride.back();
  for (std::size_t j = 0; j < total; j += last) {
    std::size_t base = 0;
    for (std::size_t i = 0; i + 1 < r; ++i) base += idx[i] * src_stride[i];
    for (std::size_t t = 0; t < last; ++t) offsets[j + t] = base + t * last_stride;
    for (std::size_t d = r - 1; d-- > 0;) {
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
    }
  }
  Tensor<T> out(os);
  const T* xp = x.value().ptr();
  for (std::size_t j = 0; j < total; ++j) out[j] = xp[offsets[j]];
  const std::size_t ix = x.id();
  return x.tape().record("permute", std::move(out), {x}, [ix, offsets = std::move(offsets)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* gx = tape.grad_data(ix)) {
      for (std::size_t j = 0; j < g.size(); ++j) gx[offsets[j]] += g[j];
    }
  });
}

template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
  std::vector<std::size_t> axes(x.shape().size());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  if (axes.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2");
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (length == 0 || start + length > s.extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range on axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  }
  Shape os = x.shape();
  os[axis] = length;
  Tensor<T> out(os);
  const T* xp = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* src = xp + (o * s.extent + start) * s.inner;
    std::copy(src, src + length * s.inner, out.ptr() + o * length * s.inner);
  }
  const std::size_t ix = x.id();
  return x.tape().record("slice", std::move(out), {x}, [ix, s, start, length](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* gx = tape.grad_data(ix)) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = gx + (o * s.extent + start) * s.inner;
        const T* src = g.ptr() + o * length * s.inner;
        for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape os = parts[0].shape();
  if (axis >= os.size()) throw DimensionError("concat axis out of range");
  std::size_t extent = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != os.size()) throw DimensionError("concat: rank mismatch " + to_string(ps) + " vs " + to_string(os));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != os[i]) throw DimensionError("concat: shape " + to_string(ps) + " vs " + to_string(os));
    }
    extents.push_back(ps[axis]);
    extent += ps[axis];
  }
  os[axis] = extent;
  const AxisSplit s = split_at(os, axis);
  Tensor<T> out(os);
  std::size_t pos = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].value().ptr();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(src + o * extents[p] * s.inner, src + (o + 1) * extents[p] * s.inner,
                out.ptr() + (o * extent + pos) * s.inner);
    }
    pos += extents[p];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record("concat", std::move(out), parts, [ids, extents, s, extent](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    std::size_t pos = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (T* gp = tape.grad_data(ids[p])) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = g.ptr() + (o * extent + pos) * s.inner;
          T* dst = gp + o * extents[p] * s.inner;
          for (std::size_t i = 0; i < extents[p] * s.inner; ++i) dst[i] += src[i];
        }
      }
      pos += extents[p];
    }
  });
}

template <typename T>
Var<T> index_select(const Var<T>& x, std::size_t axis, const std::vector<std::size_t>& index) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (index.empty()) throw DimensionError("index_select with empty index");
  for (std::size_t i : index) {
    if (i >= s.extent) throw DimensionError("index_select: index " + std::to_string(i) + " out of range for " + to_string(x.shape()));
  }
  Shape os = x.shape();
  os[axis] = index.size();
  Tensor<T> out(os);
  const T* xp = x.value().ptr();
  const std::size_t k = index.size();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < k; ++j) {
      const T* src = xp + (o * s.extent + index[j]) * s.inner;
      std::copy(src, src + s.inner, out.ptr() + (o * k + j) * s.inner);
    }
  const std::size_t ix = x.id();
  return x.tape().record("index_select", std::move(out), {x}, [ix, s, index](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* gx = tape.grad_data(ix)) {
      const std::size_t k = index.size();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < k; ++j) {
          T* dst = gx + (o * s.extent + index[j]) * s.inner;
          const T* src = g.ptr() + (o * k + j) * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
    }
  });
}

template <typename T>
Var<T> index_scatter(const Var<T>& x, std::size_t axis, const std::vector<std::size_t>& index, std::size_t size) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (index.size() != s.extent) throw DimensionError("index_scatter: index length does not match axis extent");
  for (std::size_t i : index) {
    if (i >= size) throw DimensionError("index_scatter: index " + std::to_string(i) + " >= " + std::to_string(size));
  }
  Shape os = x.shape();
  os[axis] = size;
  Tensor<T> out(os);
  const T* xp = x.value().ptr();
  const std::size_t k = index.size();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < k; ++j) {
      const T* src = xp + (o * k + j) * s.inner;
      T* dst = out.ptr() + (o * size + index[j]) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  const std::size_t ix = x.id();
  return x.tape().record("index_scatter", std::move(out), {x}, [ix, s, index, size](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    if (T* gx = tape.grad_data(ix)) {
      const std::size_t k = index.size();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < k; ++j) {
          const T* src = g.ptr() + (o * size + index[j]) * s.inner;
          T* dst = gx + (o * k + j) * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.shape().back(), rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * n;
    T* yr = out.ptr() + r * n;
    T mx = xr[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    T z = 0;
    for (std::size_t i = 0; i < n; ++i) z += (yr[i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < n; ++i) yr[i] /= z;
  }
  const std::size_t ix = x.id();
  return x.tape().record("softmax", std::move(out), {x}, [ix, n, rows](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>& y) {
    T* gx = tape.grad_data(ix);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * n;
      const T* gr = g.ptr() + r * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += yr[i] * gr[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yr[i] * (gr[i] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.shape().back(), rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * n;
    T* yr = out.ptr() + r * n;
    T mx = xr[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    T z = 0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(xr[i] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) yr[i] = xr[i] - lz;
  }
  const std::size_t ix = x.id();
  return x.tape().record("log_softmax", std::move(out), {x}, [ix, n, rows](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>& y) {
    T* gx = tape.grad_data(ix);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * n;
      const T* gr = g.ptr() + r * n;
      T total = 0;
      for (std::size_t i = 0; i < n; ++i) total += gr[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += gr[i] - std::exp(yr[i]) * total;
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps, std::optional<std::size_t> axis) {
  const Tensor<T>& xv = x.value();
  const std::size_t ax = axis.value_or(xv.rank() - 1);
  const AxisSplit s = split_at(xv.shape(), ax);
  if (gamma.value().size() != s.extent || beta.value().size() != s.extent) {
    throw DimensionError("layer_norm: affine parameters " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " for normalized extent " + std::to_string(s.extent));
  }
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  Tensor<T> out(xv.shape());
  // Per (outer, inner) group: normalized values and reciprocal std.
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto rstd = std::make_shared<std::vector<T>>(s.outer * s.inner);
  const T inv_n = T(1) / static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mu = 0;
      for (std::size_t c = 0; c < s.extent; ++c) mu += xv[base + c * s.inner];
      mu *= inv_n;
      T var = 0;
      for (std::size_t c = 0; c < s.extent; ++c) {
        const T d = xv[base + c * s.inner] - mu;
        var += d * d;
      }
      var *= inv_n;
      const T r = T(1) / std::sqrt(var + eps);
      (*rstd)[o * s.inner + i] = r;
      for (std::size_t c = 0; c < s.extent; ++c) {
        const std::size_t k = base + c * s.inner;
        const T h = (xv[k] - mu) * r;
        (*xhat)[k] = h;
        out[k] = h * gp[c] + bp[c];
      }
    }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record("layer_norm", std::move(out), {x, gamma, beta},
                         [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    const T* gam = tape.value(Var<T>(&tape, ig)).ptr();
    T* gx = tape.grad_data(ix);
    T* gg = tape.grad_data(ig);
    T* gb = tape.grad_data(ib);
    const auto& xh = *xhat;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T mean_d = 0, mean_dx = 0;
        for (std::size_t c = 0; c < s.extent; ++c) {
          const std::size_t k = base + c * s.inner;
          const T d = g[k] * gam[c];
          mean_d += d;
          mean_dx += d * xh[k];
          if (gg) gg[c] += g[k] * xh[k];
          if (gb) gb[c] += g[k];
        }
        if (!gx) continue;
        mean_d *= inv_n;
        mean_dx *= inv_n;
        const T r = (*rstd)[o * s.inner + i];
        for (std::size_t c = 0; c < s.extent; ++c) {
          const std::size_t k = base + c * s.inner;
          gx[k] += r * (g[k] * gam[c] - mean_d - xh[k] * mean_dx);
        }
      }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) - s);
      });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return unary(
      x, "silu", [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias, Stride3 stride) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, "conv3d");
  if (bias && bias->value().size() != g.out_ch) throw DimensionError("conv3d: bias length does not match output channels");
  const std::size_t plane = g.oz * g.oy * g.ox;
  Tensor<T> out(Shape{g.batch, g.out_ch, g.oz, g.oy, g.ox});
  if (bias) add_channel_bias(out.ptr(), bias->value().ptr(), g.batch, g.out_ch, plane);
  conv_correlate(g, x.value().ptr(), w.value().ptr(), out.ptr());
  const std::size_t ix = x.id(), iw = w.id();
  const bool has_bias = bias.has_value();
  const std::size_t ib = has_bias ? bias->id() : 0;
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(*bias);
  return x.tape().record("conv3d", std::move(out), inputs, [=](Tape<T>& tape, const Tensor<T>& gy, const Tensor<T>&) {
    const T* xv = tape.value(Var<T>(&tape, ix)).ptr();
    const T* wv = tape.value(Var<T>(&tape, iw)).ptr();
    if (T* gx = tape.grad_data(ix)) conv_scatter(g, gy.ptr(), wv, gx);
    if (T* gw = tape.grad_data(iw)) conv_weight_grad(g, xv, gy.ptr(), gw);
    if (has_bias) {
      if (T* gb = tape.grad_data(ib)) channel_bias_grad(gy.ptr(), gb, g.batch, g.out_ch, plane);
    }
  });
}

template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias, Stride3 stride) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5 || xs[1] != ws[0]) {
    throw DimensionError("conv_transpose3d: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  }
  for (std::size_t s : stride) {
    if (s == 0) throw DimensionError("conv_transpose3d: stride must be >= 1");
  }
  // Geometry of the forward convolution this op is the adjoint of.
  const Shape full{xs[0], ws[1], (xs[2] - 1) * stride[0] + ws[2], (xs[3] - 1) * stride[1] + ws[3],
                   (xs[4] - 1) * stride[2] + ws[4]};
  const ConvGeom g = conv_geom(full, ws, stride, "conv_transpose3d");
  if (bias && bias->value().size() != g.in_ch) throw DimensionError("conv_transpose3d: bias length does not match output channels");
  const std::size_t plane = g.z * g.y * g.x;
  Tensor<T> out(full);
  if (bias) add_channel_bias(out.ptr(), bias->value().ptr(), g.batch, g.in_ch, plane);
  conv_scatter(g, x.value().ptr(), w.value().ptr(), out.ptr());
  const std::size_t ix = x.id(), iw = w.id();
  const bool has_bias = bias.has_value();
  const std::size_t ib = has_bias ? bias->id() : 0;
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(*bias);
  return x.tape().record("conv_transpose3d", std::move(out), inputs, [=](Tape<T>& tape, const Tensor<T>& gy, const Tensor<T>&) {
    const T* xv = tape.value(Var<T>(&tape, ix)).ptr();
    const T* wv = tape.value(Var<T>(&tape, iw)).ptr();
    if (T* gx = tape.grad_data(ix)) conv_correlate(g, gy.ptr(), wv, gx);
    if (T* gw = tape.grad_data(iw)) conv_weight_grad(g, gy.ptr(), xv, gw);
    if (has_bias) {
      if (T* gb = tape.grad_data(ib)) channel_bias_grad(gy.ptr(), gb, g.batch, g.in_ch, plane);
    }
  });
}

#define PRIMUS_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> scale(const Var<T>&, T);                                                                 \
  template Var<T> scale_per_sample(const Var<T>&, const std::vector<T>&);                                  \
  template Var<T> sum(const Var<T>&);                                                                      \
  template Var<T> mean(const Var<T>&);                                                                     \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> linear(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);                      \
  template Var<T> reshape(const Var<T>&, Shape);                                                           \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                                 \
  template Var<T> transpose_last2(const Var<T>&);                                                          \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                             \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                         \
  template Var<T> index_select(const Var<T>&, std::size_t, const std::vector<std::size_t>&);               \
  template Var<T> index_scatter(const Var<T>&, std::size_t, const std::vector<std::size_t>&, std::size_t); \
  template Var<T> softmax(const Var<T>&);                                                                  \
  template Var<T> log_softmax(const Var<T>&);                                                              \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T, std::optional<std::size_t>);  \
  template Var<T> sigmoid(const Var<T>&);                                                                  \
  template Var<T> silu(const Var<T>&);                                                                     \
  template Var<T> gelu(const Var<T>&);                                                                     \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, Stride3);             \
  template Var<T> conv_transpose3d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, Stride3);

PRIMUS_INSTANTIATE_OPS(float)
PRIMUS_INSTANTIATE_OPS(double)

}  // namespace primus
