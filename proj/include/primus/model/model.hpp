#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "primus/model/config.hpp"
#include "primus/model/posenc.hpp"
#include "primus/model/tokenizer.hpp"
#include "primus/model/weights.hpp"
#include "primus/numerics/tape.hpp"

namespace primus {

template <typename P>
struct NamedParamT {
  std::string name;
  P* tensor;
  ParamCategory category;
  bool active;  // false for weights of identity-replaced blocks
};

template <typename T>
struct ForwardOptions {
  bool train = false;
  std::mt19937_64* rng = nullptr;
  // Per-sample kept grid indices; null runs on the full sequence.
  const std::vector<std::vector<std::size_t>>* keep = nullptr;
  // Called with tags "tokens", "block_<i>", "pre_decoder"; values are [B, N', d].
  std::function<void(const std::string&, const Var<T>&)> capture;
};

template <typename T>
class PrimusModel {
 public:
  using Param = NamedParamT<Tensor<T>>;
  using ConstParam = NamedParamT<const Tensor<T>>;

  PrimusModel() = default;
  // Random initialisation: linears and embeddings N(0, 0.02), convolutions
  // U(+-1/sqrt(fan_in)), norms (1, 0), LayerScale at its configured value.
  PrimusModel(const PrimusConfig& cfg, std::uint64_t seed);
  // All tensors allocated and zero-filled (norm gammas included).
  static PrimusModel zeros(const PrimusConfig& cfg);

  const PrimusConfig& config() const { return cfg_; }
  const Rope3D* rope() const { return cfg_.use_rope ? &rope_ : nullptr; }

  PatchEmbedWeights<T> embed;
  Tensor<T> lpe;        // [N, d], empty when LPE is off
  Tensor<T> registers;  // [R, d], empty without register tokens
  std::vector<BlockWeights<T>> blocks;
  DecoderWeights<T> decoder;

  const std::vector<bool>& identity_blocks() const { return identity_; }
  // Throws ConfigError on an out-of-range index.
  void set_identity(std::size_t block, bool on = true);
  void set_all_identity(bool on = true);

  std::vector<Param> parameters();
  std::vector<ConstParam> parameters() const;
  std::size_t parameter_count() const;

  // x [B, C, Z, Y, X] -> class scores [B, num_classes, Z, Y, X].
  Var<T> forward(Tape<T>& tape, const Tensor<T>& x, const ForwardOptions<T>& opt = {}) const;
  // Composition without any Transformer block: tokenize, +LPE, decode.
  Var<T> forward_without_blocks(Tape<T>& tape, const Tensor<T>& x) const;

  template <typename U>
  PrimusModel<U> cast() const;

 private:
  template <typename U>
  friend class PrimusModel;
  template <typename Self, typename F>
  static void visit(Self& self, F&& f);

  explicit PrimusModel(const PrimusConfig& cfg);  // allocates zero tensors

  PrimusConfig cfg_;
  Rope3D rope_;
  std::vector<bool> identity_;
};

// Copy of `model` with the listed blocks replaced by identity mappings.
template <typename T>
PrimusModel<T> replace_blocks_with_identity(const PrimusModel<T>& model, const std::vector<std::size_t>& which);
template <typename T>
PrimusModel<T> replace_all_blocks_with_identity(const PrimusModel<T>& model);

// Stacks a batch of volumes into [B, C, Z, Y, X].
Tensor<float> stack_volumes(const std::vector<const Volume*>& vols);

extern template class PrimusModel<float>;
extern template class PrimusModel<double>;

}  // namespace primus
