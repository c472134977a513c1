#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "primus/numerics/tensor.hpp"

namespace primus {

template <typename T>
struct LinearWeights {
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out]
};

template <typename T>
struct NormWeights {
  Tensor<T> gamma;
  Tensor<T> beta;
  bool enabled() const { return !gamma.empty(); }
};

template <typename T>
struct PatchEmbedWeights {
  Tensor<T> w;  // [d, in_channels, k, k, k]
  Tensor<T> b;  // [d]
};

template <typename T>
struct DecoderStageWeights {
  Tensor<T> w;  // [c_in, c_out, 2, 2, 2] (transposed-convolution layout)
  Tensor<T> b;  // [c_out]
  NormWeights<T> norm;
};

template <typename T>
struct DecoderWeights {
  std::vector<DecoderStageWeights<T>> stages;
  Tensor<T> head_w;  // [num_classes, c_last, 1, 1, 1]
  Tensor<T> head_b;
};

template <typename T>
struct BlockWeights {
  NormWeights<T> norm1;
  LinearWeights<T> qkv;   // fused [3d, d]
  LinearWeights<T> proj;  // [d, d]
  NormWeights<T> pan;     // disabled when post-attention norm is off
  NormWeights<T> norm2;
  LinearWeights<T> gate;  // [h, d]
  LinearWeights<T> val;   // [h, d]
  NormWeights<T> inner;   // over h
  LinearWeights<T> out;   // [d, h]
  Tensor<T> ls_attn;      // [d], empty when LayerScale is off
  Tensor<T> ls_mlp;
};

// Accounting bucket of a parameter tensor.
enum class ParamCategory { transformer, non_transformer, lpe };

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
  ParamCategory category;
};

}  // namespace primus
