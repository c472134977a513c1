#pragma once

#include <cstddef>
#include <vector>

#include "primus/numerics/tensor.hpp"

namespace primus {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 5e-2;
};

// Decoupled weight decay (p -= lr * wd * p) followed by a bias-corrected Adam step.
class AdamW {
 public:
  explicit AdamW(AdamWOptions opt = {}) : opt_(opt) {}

  // params[i] and grads[i] must keep their shapes across calls.
  void step(const std::vector<Tensor<float>*>& params, const std::vector<Tensor<float>>& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  AdamWOptions opt_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double global_norm(const std::vector<Tensor<float>>& grads);

// Rescales grads by max_norm / (norm + 1e-6) when their global norm exceeds max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor<float>>& grads, double max_norm);

// lr * (1 - step / (total - 1))^power: exactly lr at step 0 and 0 at the last step.
double poly_lr(double lr, std::size_t step, std::size_t total_steps, double power = 0.9);

}  // namespace primus
