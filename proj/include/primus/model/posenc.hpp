#pragma once

#include <cstddef>
#include <vector>

#include "primus/model/tokenizer.hpp"
#include "primus/numerics/tape.hpp"

namespace primus {

// 3D rotary embedding. The head vector is split into three equal contiguous
// chunks assigned to (z, y, x); inside a chunk, pair j = (v[2j], v[2j+1]) rotates
// by angle (p_axis / fov) * theta_j with theta_j = base^(-2j / chunk).
struct Rope3D {
  std::size_t head_dim = 0;
  double base = 10000.0;
  double fov = 1.0;
  std::vector<double> theta;  // one frequency per pair within a chunk

  Rope3D() = default;
  Rope3D(std::size_t head_dim, double base = 10000.0, double fov = 1.0);

  std::size_t chunk() const { return head_dim / 3; }
  std::size_t pairs_per_chunk() const { return head_dim / 6; }
  double angle(int coord, std::size_t pair) const { return coord / fov * theta[pair]; }

  // Rotates one head vector in place. Sentinel coordinates are left untouched.
  template <typename T>
  void rotate(T* v, const Coord& p, bool inverse = false) const;
};

// x [B, H, N, head_dim]; coords has B*N entries (sample-major).
template <typename T>
Var<T> apply_rope3d(const Var<T>& x, const std::vector<Coord>& coords, const Rope3D& rope);

// tokens [B, N, d] + table [N, d]. Throws ShapeError on a grid mismatch.
template <typename T>
Var<T> add_learnable_pe(const Var<T>& tokens, const Var<T>& table);

}  // namespace primus
