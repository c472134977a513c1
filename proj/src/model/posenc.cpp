#include "primus/model/posenc.hpp"

#include <cmath>
#include <memory>

#include "primus/numerics/ops.hpp"

namespace primus {

Rope3D::Rope3D(std::size_t head_dim, double base, double fov) : head_dim(head_dim), base(base), fov(fov) {
  if (head_dim == 0 || head_dim % 6) {
    throw ConfigError("3D RoPE needs head_dim divisible by 6, got " + std::to_string(head_dim));
  }
  if (!(fov > 0)) throw ConfigError("rope fov must be > 0");
  const double c = double(chunk());
  for (std::size_t j = 0; j < pairs_per_chunk(); ++j) theta.push_back(std::pow(base, -2.0 * double(j) / c));
}

template <typename T>
void Rope3D::rotate(T* v, const Coord& p, bool inverse) const {
  if (p == kSentinel) return;
  const int pos[3] = {p.z, p.y, p.x};
  const std::size_t c = chunk();
  for (std::size_t axis = 0; axis < 3; ++axis) {
    T* u = v + axis * c;
    for (std::size_t j = 0; j < pairs_per_chunk(); ++j) {
      const double a = inverse ? -angle(pos[axis], j) : angle(pos[axis], j);
      const double cs = std::cos(a), sn = std::sin(a);
      const double x0 = u[2 * j], x1 = u[2 * j + 1];
      u[2 * j] = T(x0 * cs - x1 * sn);
      u[2 * j + 1] = T(x0 * sn + x1 * cs);
    }
  }
}

template void Rope3D::rotate(float*, const Coord&, bool) const;
template void Rope3D::rotate(double*, const Coord&, bool) const;

template <typename T>
Var<T> apply_rope3d(const Var<T>& x, const std::vector<Coord>& coords, const Rope3D& rope) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[3] != rope.head_dim) {
    throw DimensionError("apply_rope3d expects [B, H, N, " + std::to_string(rope.head_dim) + "], got " + to_string(s));
  }
  const std::size_t B = s[0], H = s[1], N = s[2], hd = s[3];
  if (coords.size() != B * N) {
    throw DimensionError("apply_rope3d: " + std::to_string(coords.size()) + " coords for " + std::to_string(B * N) + " tokens");
  }
  auto pos = std::make_shared<std::vector<Coord>>(coords);
  auto rp = std::make_shared<Rope3D>(rope);
  Tensor<T> out = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t n = 0; n < N; ++n) rope.rotate(out.ptr() + ((b * H + h) * N + n) * hd, coords[b * N + n]);
  return x.tape().record("rope3d", std::move(out), {x}, [x, pos, rp, B, H, N, hd](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
    T* dx = tape.grad_data(x);
    if (!dx) return;
    std::vector<T> tmp(hd);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t off = ((b * H + h) * N + n) * hd;
          std::copy(g.ptr() + off, g.ptr() + off + hd, tmp.begin());
          rp->rotate(tmp.data(), (*pos)[b * N + n], true);
          for (std::size_t i = 0; i < hd; ++i) dx[off + i] += tmp[i];
        }
  });
}

template <typename T>
Var<T> add_learnable_pe(const Var<T>& tokens, const Var<T>& table) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || table.shape() != Shape{s[1], s[2]}) {
    throw ShapeError("learnable PE table " + to_string(table.shape()) + " does not match tokens " + to_string(s));
  }
  return add(tokens, table);
}

template Var<float> apply_rope3d(const Var<float>&, const std::vector<Coord>&, const Rope3D&);
template Var<double> apply_rope3d(const Var<double>&, const std::vector<Coord>&, const Rope3D&);
template Var<float> add_learnable_pe(const Var<float>&, const Var<float>&);
template Var<double> add_learnable_pe(const Var<double>&, const Var<double>&);

}  // namespace primus
