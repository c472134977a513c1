#include "primus/experiments/optim.hpp"

#include <algorithm>
#include <cmath>

#include "primus/numerics/errors.hpp"

namespace primus {

void AdamW::step(const std::vector<Tensor<float>*>& params, const std::vector<Tensor<float>>& grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("AdamW: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const Tensor<float>* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("AdamW: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * opt_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& p = *params[i];
    const Tensor<float>& g = grads[i];
    if (g.size() != p.size() || m_[i].size() != p.size()) throw DimensionError("AdamW: shape changed for parameter " + std::to_string(i));
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      m[k] = opt_.beta1 * m[k] + (1.0 - opt_.beta1) * gk;
      v[k] = opt_.beta2 * v[k] + (1.0 - opt_.beta2) * gk * gk;
      const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + opt_.eps);
      p[k] = static_cast<float>(p[k] * decay - lr * update);
    }
  }
}

double global_norm(const std::vector<Tensor<float>>& grads) {
  double sq = 0;
  for (const Tensor<float>& g : grads) {
    for (float v : g.data()) sq += static_cast<double>(v) * v;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<Tensor<float>>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-6));
    for (Tensor<float>& g : grads) {
      for (float& v : g.data()) v *= s;
    }
  }
  return norm;
}

double poly_lr(double lr, std::size_t step, std::size_t total_steps, double power) {
  if (total_steps <= 1) return lr;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr * std::pow(std::max(frac, 0.0), power);
}

}  // namespace primus
