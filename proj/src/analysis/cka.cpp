#include "primus/analysis/cka.hpp"

#include <cmath>

namespace primus {

Tensor<double> gram(const Tensor<double>& x) {
  if (x.rank() < 2) throw DomainError("gram expects an n x p matrix, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), p = x.size() / n;
  Tensor<double> K({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double* a = x.ptr() + i * p;
      const double* b = x.ptr() + j * p;
      double s = 0;
      for (std::size_t c = 0; c < p; ++c) s += a[c] * b[c];
      K[i * n + j] = K[j * n + i] = s;
    }
  return K;
}

double unbiased_hsic(const Tensor<double>& K, const Tensor<double>& L) {
  if (K.rank() != 2 || K.dim(0) != K.dim(1) || K.shape() != L.shape()) {
    throw DomainError("unbiased_hsic expects two n x n matrices, got " + to_string(K.shape()) + " and " + to_string(L.shape()));
  }
  const std::size_t n = K.dim(0);
  if (n < 4) throw DomainError("unbiased HSIC needs n >= 4, got " + std::to_string(n));
  // With diagonals zeroed: tr(KL), 1'K1, 1'L1 and 1'KL1 = sum_i (K1)_i (L1)_i.
  double trace = 0, sum_k = 0, sum_l = 0, cross = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_k = 0, row_l = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double k = K[i * n + j], l = L[i * n + j];
      trace += k * L[j * n + i];
      row_k += k;
      row_l += l;
    }
    sum_k += row_k;
    sum_l += row_l;
    cross += row_k * row_l;
  }
  const double nn = double(n);
  return (trace + sum_k * sum_l / ((nn - 1) * (nn - 2)) - 2.0 / (nn - 2) * cross) / (nn * (nn - 3));
}

double minibatch_cka(const std::vector<Tensor<double>>& a, const std::vector<Tensor<double>>& b) {
  if (a.empty() || a.size() != b.size()) {
    throw DomainError("minibatch CKA needs the same nonzero number of batches, got " + std::to_string(a.size()) + " and " +
                      std::to_string(b.size()));
  }
  double kl = 0, kk = 0, ll = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].dim(0) != b[i].dim(0)) throw DomainError("minibatch CKA: batch " + std::to_string(i) + " sizes differ");
    if (a[i].dim(0) != a[0].dim(0)) throw DomainError("minibatch CKA: all batches must share n");
    const Tensor<double> K = gram(a[i]), L = gram(b[i]);
    kl += unbiased_hsic(K, L);
    kk += unbiased_hsic(K, K);
    ll += unbiased_hsic(L, L);
  }
  const double m = double(a.size());
  kl /= m;
  kk /= m;
  ll /= m;
  if (!(kk > 0) || !(ll > 0)) throw DegenerateInputError("minibatch CKA: self-HSIC is not positive (constant activations?)");
  return kl / std::sqrt(kk * ll);
}

}  // namespace primus
