#include "primus/experiments/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "primus/numerics/errors.hpp"

namespace primus {

DiceScore dice(const LabelVolume& pred, const LabelVolume& ref, std::size_t num_classes) {
  if (pred.dims != ref.dims) throw ShapeError("dice: dims " + to_string(pred.dims) + " vs " + to_string(ref.dims));
  if (num_classes < 2) throw ConfigError("dice needs at least one foreground class");
  std::vector<std::size_t> p(num_classes, 0), r(num_classes, 0), both(num_classes, 0);
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const std::uint16_t a = pred.labels[i], b = ref.labels[i];
    if (a < num_classes) ++p[a];
    if (b < num_classes) ++r[b];
    if (a == b && a < num_classes) ++both[a];
  }
  DiceScore s;
  for (std::size_t c = 1; c < num_classes; ++c) {
    const std::size_t denom = p[c] + r[c];
    s.per_class.push_back(denom == 0 ? 1.0 : 2.0 * static_cast<double>(both[c]) / static_cast<double>(denom));
    s.mean += s.per_class.back();
  }
  s.mean /= static_cast<double>(num_classes - 1);
  return s;
}

DiceScore average(const std::vector<DiceScore>& scores) {
  DiceScore out;
  if (scores.empty()) return out;
  out.per_class.assign(scores.front().per_class.size(), 0.0);
  for (const DiceScore& s : scores) {
    if (s.per_class.size() != out.per_class.size()) throw ShapeError("average: class counts differ");
    for (std::size_t c = 0; c < s.per_class.size(); ++c) out.per_class[c] += s.per_class[c];
    out.mean += s.mean;
  }
  const double n = static_cast<double>(scores.size());
  for (double& v : out.per_class) v /= n;
  out.mean /= n;
  return out;
}

template <typename T>
Var<T> segmentation_loss(const Var<T>& scores, const std::vector<std::uint16_t>& labels, const LossOptions& opt,
                         const std::vector<T>* voxel_weights) {
  const Tensor<T>& s = scores.value();
  if (s.rank() != 5) throw DimensionError("segmentation_loss: scores must be [B, C, Z, Y, X], got " + to_string(s.shape()));
  const std::size_t B = s.dim(0), C = s.dim(1), V = s.dim(2) * s.dim(3) * s.dim(4);
  if (C < 2) throw DimensionError("segmentation_loss needs at least two classes");
  if (labels.size() != B * V) throw DimensionError("segmentation_loss: label count does not match scores");
  if (voxel_weights && voxel_weights->size() != B * V) throw DimensionError("segmentation_loss: weight count mismatch");
  for (std::uint16_t l : labels) {
    if (l >= C) throw ShapeError("segmentation_loss: label " + std::to_string(l) + " >= class count " + std::to_string(C));
  }
  auto weight = [voxel_weights](std::size_t i) { return voxel_weights ? (*voxel_weights)[i] : T(1); };

  // Softmax probabilities, [B, C, V].
  auto prob = std::make_shared<std::vector<T>>(s.size());
  T ce = 0, wsum = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t v = 0; v < V; ++v) {
      const T* sv = s.ptr() + b * C * V + v;
      T* pv = prob->data() + b * C * V + v;
      T mx = sv[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, sv[c * V]);
      T z = 0;
      for (std::size_t c = 0; c < C; ++c) z += (pv[c * V] = std::exp(sv[c * V] - mx));
      for (std::size_t c = 0; c < C; ++c) pv[c * V] /= z;
      const T w = weight(b * V + v);
      const std::uint16_t y = labels[b * V + v];
      ce -= w * (sv[y * V] - mx - std::log(z));
      wsum += w;
    }
  }
  ce = wsum > 0 ? ce / wsum : T(0);

  // Soft-Dice intersection and sum per (sample, foreground class).
  const std::size_t F = C - 1;
  auto inter = std::make_shared<std::vector<T>>(B * F, T(0));
  auto total = std::make_shared<std::vector<T>>(B * F, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 1; c < C; ++c) {
      T I = 0, S = 0;
      const T* pc = prob->data() + (b * C + c) * V;
      for (std::size_t v = 0; v < V; ++v) {
        const T w = weight(b * V + v);
        const T t = labels[b * V + v] == c ? T(1) : T(0);
        I += w * pc[v] * t;
        S += w * (pc[v] + t);
      }
      (*inter)[b * F + c - 1] = I;
      (*total)[b * F + c - 1] = S;
    }
  }
  const T smooth = static_cast<T>(opt.smooth);
  T dsc = 0;
  for (std::size_t i = 0; i < B * F; ++i) dsc += (T(2) * (*inter)[i] + smooth) / ((*total)[i] + smooth);
  dsc /= static_cast<T>(B * F);

  const T ce_w = static_cast<T>(opt.ce_weight), dice_w = static_cast<T>(opt.dice_weight);
  Tensor<T> out = Tensor<T>::scalar(ce_w * ce + dice_w * (T(1) - dsc));
  const std::size_t is = scores.id();
  std::vector<std::uint16_t> lab = labels;
  std::vector<T> wts = voxel_weights ? *voxel_weights : std::vector<T>{};
  return scores.tape().record(
      "segmentation_loss", std::move(out), {scores},
      [=, lab = std::move(lab), wts = std::move(wts)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* gs = tape.grad_data(is);
        if (!gs) return;
        const T go = g[0];
        const T ce_scale = wsum > 0 ? go * ce_w / wsum : T(0);
        const T dice_scale = -go * dice_w / static_cast<T>(B * F);
        std::vector<T> gp(C);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t v = 0; v < V; ++v) {
            const T w = wts.empty() ? T(1) : wts[b * V + v];
            if (w == T(0)) continue;
            const std::uint16_t y = lab[b * V + v];
            const T* pv = prob->data() + b * C * V + v;
            // d(soft Dice loss)/dp for each class, then through the softmax Jacobian.
            T dot = 0;
            gp[0] = 0;
            for (std::size_t c = 1; c < C; ++c) {
              const std::size_t k = b * F + c - 1;
              const T den = (*total)[k] + smooth;
              const T t = y == c ? T(1) : T(0);
              gp[c] = dice_scale * w * (T(2) * t * den - (T(2) * (*inter)[k] + smooth)) / (den * den);
              dot += gp[c] * pv[c * V];
            }
            T* gv = gs + b * C * V + v;
            for (std::size_t c = 0; c < C; ++c) {
              const T p = pv[c * V];
              const T t = y == c ? T(1) : T(0);
              gv[c * V] += ce_scale * w * (p - t) + p * (gp[c] - dot);
            }
          }
        }
      });
}

template Var<float> segmentation_loss(const Var<float>&, const std::vector<std::uint16_t>&, const LossOptions&,
                                      const std::vector<float>*);
template Var<double> segmentation_loss(const Var<double>&, const std::vector<std::uint16_t>&, const LossOptions&,
                                       const std::vector<double>*);

}  // namespace primus
