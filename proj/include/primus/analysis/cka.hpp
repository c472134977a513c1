#pragma once

#include <cstddef>
#include <vector>

#include "primus/numerics/tensor.hpp"

namespace primus {

// Linear-kernel Gram matrix X X^T of an n x p matrix (any trailing dims are flattened).
Tensor<double> gram(const Tensor<double>& x);

// Unbiased HSIC estimator on n x n Gram matrices (diagonals ignored).
// Throws DomainError when n < 4 or the shapes disagree.
double unbiased_hsic(const Tensor<double>& K, const Tensor<double>& L);

// Minibatch CKA over paired batches: mean_i HSIC(K_i, L_i) normalised by the
// square roots of the mean self-HSIC terms. Throws DomainError when the batch
// lists differ in length or batch size, DegenerateInputError when a self-HSIC
// mean is not positive.
double minibatch_cka(const std::vector<Tensor<double>>& a, const std::vector<Tensor<double>>& b);

}  // namespace primus
