#include "primus/model/model.hpp"

#include <cmath>

#include "primus/model/masking.hpp"
#include "primus/model/transformer.hpp"
#include "primus/numerics/ops.hpp"

namespace primus {

namespace {

template <typename T>
NormWeights<T> norm_of(std::size_t n) {
  return {Tensor<T>({n}, T(1)), Tensor<T>({n}, T(0))};
}

template <typename T>
LinearWeights<T> linear_of(std::size_t out, std::size_t in) {
  return {Tensor<T>({out, in}), Tensor<T>({out})};
}

}  // namespace

template <typename T>
PrimusModel<T>::PrimusModel(const PrimusConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  if (cfg.use_rope) rope_ = Rope3D(cfg.head_dim(), cfg.rope_base, cfg.rope_fov);
  const std::size_t d = cfg.embed_dim, h = cfg.hidden_dim(), k = cfg.patch_size;
  embed = {Tensor<T>({d, cfg.in_channels, k, k, k}), Tensor<T>({d})};
  if (cfg.use_lpe) lpe = Tensor<T>({cfg.tokens(), d});
  if (cfg.register_tokens) registers = Tensor<T>({cfg.register_tokens, d});
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    BlockWeights<T> b;
    b.norm1 = norm_of<T>(d);
    b.qkv = linear_of<T>(3 * d, d);
    b.proj = linear_of<T>(d, d);
    if (cfg.post_attn_norm) b.pan = norm_of<T>(d);
    b.norm2 = norm_of<T>(d);
    b.gate = linear_of<T>(h, d);
    b.val = linear_of<T>(h, d);
    b.inner = norm_of<T>(h);
    b.out = linear_of<T>(d, h);
    if (cfg.layer_scale) {
      b.ls_attn = Tensor<T>({d}, T(cfg.layer_scale_init));
      b.ls_mlp = Tensor<T>({d}, T(cfg.layer_scale_init));
    }
    blocks.push_back(std::move(b));
  }
  std::size_t c_in = d;
  for (std::size_t c : cfg.decoder_channels()) {
    DecoderStageWeights<T> s{Tensor<T>({c_in, c, 2, 2, 2}), Tensor<T>({c}), {}};
    if (cfg.decoder_norm) s.norm = norm_of<T>(c);
    decoder.stages.push_back(std::move(s));
    c_in = c;
  }
  decoder.head_w = Tensor<T>({cfg.num_classes, c_in, 1, 1, 1});
  decoder.head_b = Tensor<T>({cfg.num_classes});
  identity_.assign(cfg.layers, false);
}

template <typename T>
PrimusModel<T>::PrimusModel(const PrimusConfig& cfg, std::uint64_t seed) : PrimusModel(cfg) {
  std::mt19937_64 rng(seed);
  auto normal = [&](Tensor<T>& t, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    for (auto& v : t.data()) v = T(dist(rng));
  };
  auto uniform = [&](Tensor<T>& t, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = T(dist(rng));
  };
  const std::size_t k = cfg.patch_size;
  const double embed_bound = 1.0 / std::sqrt(double(cfg.in_channels * k * k * k));
  uniform(embed.w, embed_bound);
  uniform(embed.b, embed_bound);
  if (!lpe.empty()) normal(lpe, 0.02);
  if (!registers.empty()) normal(registers, 0.02);
  for (auto& b : blocks) {
    for (LinearWeights<T>* l : {&b.qkv, &b.proj, &b.gate, &b.val, &b.out}) normal(l->w, 0.02);
  }
  for (auto& s : decoder.stages) {
    // PyTorch's transposed convolution computes fan_in from weight.size(1) * kernel volume.
    const double bound = 1.0 / std::sqrt(double(s.w.dim(1) * 8));
    uniform(s.w, bound);
    uniform(s.b, bound);
  }
  const double head_bound = 1.0 / std::sqrt(double(decoder.head_w.dim(1)));
  uniform(decoder.head_w, head_bound);
  uniform(decoder.head_b, head_bound);
}

template <typename T>
PrimusModel<T> PrimusModel<T>::zeros(const PrimusConfig& cfg) {
  PrimusModel m(cfg);
  for (auto& p : m.parameters()) p.tensor->fill(T(0));
  return m;
}

template <typename T>
void PrimusModel<T>::set_identity(std::size_t block, bool on) {
  if (block >= identity_.size()) {
    throw ConfigError("block index " + std::to_string(block) + " out of range for " + std::to_string(identity_.size()) + " layers");
  }
  identity_[block] = on;
}

template <typename T>
void PrimusModel<T>::set_all_identity(bool on) {
  identity_.assign(identity_.size(), on);
}

template <typename T>
template <typename Self, typename F>
void PrimusModel<T>::visit(Self& self, F&& f) {
  using Cat = ParamCategory;
  auto norm = [&](const std::string& n, auto& w, Cat c, bool active) {
    if (!w.enabled()) return;
    f(n + ".gamma", w.gamma, c, active);
    f(n + ".beta", w.beta, c, active);
  };
  auto lin = [&](const std::string& n, auto& w, bool active) {
    f(n + ".weight", w.w, Cat::transformer, active);
    f(n + ".bias", w.b, Cat::transformer, active);
  };
  f("embed.weight", self.embed.w, Cat::non_transformer, true);
  f("embed.bias", self.embed.b, Cat::non_transformer, true);
  if (!self.lpe.empty()) f("lpe", self.lpe, Cat::lpe, true);
  if (!self.registers.empty()) f("registers", self.registers, Cat::non_transformer, true);
  for (std::size_t i = 0; i < self.blocks.size(); ++i) {
    auto& b = self.blocks[i];
    const bool active = !self.identity_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    norm(p + "norm1", b.norm1, Cat::transformer, active);
    lin(p + "qkv", b.qkv, active);
    lin(p + "proj", b.proj, active);
    norm(p + "pan", b.pan, Cat::transformer, active);
    norm(p + "norm2", b.norm2, Cat::transformer, active);
    lin(p + "mlp.gate", b.gate, active);
    lin(p + "mlp.val", b.val, active);
    norm(p + "mlp.norm", b.inner, Cat::transformer, active);
    lin(p + "mlp.out", b.out, active);
    if (!b.ls_attn.empty()) f(p + "ls_attn", b.ls_attn, Cat::transformer, active);
    if (!b.ls_mlp.empty()) f(p + "ls_mlp", b.ls_mlp, Cat::transformer, active);
  }
  for (std::size_t i = 0; i < self.decoder.stages.size(); ++i) {
    auto& s = self.decoder.stages[i];
    const std::string p = "decoder." + std::to_string(i) + ".";
    f(p + "weight", s.w, Cat::non_transformer, true);
    f(p + "bias", s.b, Cat::non_transformer, true);
    norm(p + "norm", s.norm, Cat::non_transformer, true);
  }
  f("head.weight", self.decoder.head_w, Cat::non_transformer, true);
  f("head.bias", self.decoder.head_b, Cat::non_transformer, true);
}

template <typename T>
auto PrimusModel<T>::parameters() -> std::vector<Param> {
  std::vector<Param> out;
  visit(*this, [&](const std::string& n, Tensor<T>& t, ParamCategory c, bool a) { out.push_back({n, &t, c, a}); });
  return out;
}

template <typename T>
auto PrimusModel<T>::parameters() const -> std::vector<ConstParam> {
  std::vector<ConstParam> out;
  visit(*this, [&](const std::string& n, const Tensor<T>& t, ParamCategory c, bool a) { out.push_back({n, &t, c, a}); });
  return out;
}

template <typename T>
std::size_t PrimusModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

template <typename T>
Var<T> PrimusModel<T>::forward(Tape<T>& tape, const Tensor<T>& x, const ForwardOptions<T>& opt) const {
  if (x.rank() != 5 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("model input must be [B, " + std::to_string(cfg_.in_channels) + ", Z, Y, X], got " + to_string(x.shape()));
  }
  TokenSequence<T> t = tokenize(tape.constant(x), embed, cfg_.patch_size);
  if (!lpe.empty()) t.tokens = add_learnable_pe(t.tokens, tape.param(lpe));
  if (opt.capture) opt.capture("tokens", t.tokens);

  const std::size_t B = t.batch(), N = t.length(), D = t.embed_dim();
  const std::size_t R = registers.empty() ? 0 : registers.dim(0);
  if (opt.keep) t = mask_tokens(t, *opt.keep);
  const std::size_t kept = t.length();
  Var<T> h = t.tokens;
  std::vector<Coord> coords = t.coords;
  if (R) {
    Var<T> regs = add(tape.constant(Tensor<T>({B, R, D})), tape.param(registers));
    h = concat<T>({h, regs}, 1);
    coords.clear();
    for (std::size_t b = 0; b < B; ++b) {
      coords.insert(coords.end(), t.sample_coords(b), t.sample_coords(b) + kept);
      coords.insert(coords.end(), R, kSentinel);
    }
  }

  BlockOptions o;
  o.heads = cfg_.heads;
  o.eps = cfg_.norm_eps;
  o.drop_path = cfg_.drop_path;
  o.attn_dropout = cfg_.attn_dropout;
  o.proj_dropout = cfg_.proj_dropout;
  o.train = opt.train;
  o.rng = opt.rng;
  o.rope = rope();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!identity_[i]) h = primus_block(h, blocks[i], coords, o);
    if (opt.capture) opt.capture("block_" + std::to_string(i), R ? slice(h, 1, 0, kept) : h);
  }
  if (R) h = slice(h, 1, 0, kept);
  if (opt.keep) h = scatter_tokens(h, *opt.keep, N);
  if (opt.capture) opt.capture("pre_decoder", h);
  TokenSequence<T> full{h, t.grid, {}};
  return decode(full, decoder, cfg_.patch_size, T(cfg_.norm_eps));
}

template <typename T>
Var<T> PrimusModel<T>::forward_without_blocks(Tape<T>& tape, const Tensor<T>& x) const {
  TokenSequence<T> t = tokenize(tape.constant(x), embed, cfg_.patch_size);
  if (!lpe.empty()) t.tokens = add_learnable_pe(t.tokens, tape.param(lpe));
  return decode(t, decoder, cfg_.patch_size, T(cfg_.norm_eps));
}

template <typename T>
template <typename U>
PrimusModel<U> PrimusModel<T>::cast() const {
  PrimusModel<U> out(cfg_);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
  out.identity_ = identity_;
  return out;
}

template <typename T>
PrimusModel<T> replace_blocks_with_identity(const PrimusModel<T>& model, const std::vector<std::size_t>& which) {
  PrimusModel<T> out = model;
  for (std::size_t i : which) out.set_identity(i);
  return out;
}

template <typename T>
PrimusModel<T> replace_all_blocks_with_identity(const PrimusModel<T>& model) {
  PrimusModel<T> out = model;
  out.set_all_identity();
  return out;
}

Tensor<float> stack_volumes(const std::vector<const Volume*>& vols) {
  if (vols.empty()) throw ShapeError("cannot stack an empty batch");
  const Volume& f = *vols.front();
  Tensor<float> out({vols.size(), f.channels, f.dims[0], f.dims[1], f.dims[2]});
  const std::size_t per = f.data.size();
  for (std::size_t b = 0; b < vols.size(); ++b) {
    if (vols[b]->dims != f.dims || vols[b]->channels != f.channels) throw ShapeError("batch volumes differ in shape");
    std::copy(vols[b]->data.begin(), vols[b]->data.end(), out.ptr() + b * per);
  }
  return out;
}

template class PrimusModel<float>;
template class PrimusModel<double>;
template PrimusModel<double> PrimusModel<float>::cast<double>() const;
template PrimusModel<float> PrimusModel<double>::cast<float>() const;
template PrimusModel<float> PrimusModel<float>::cast<float>() const;
template PrimusModel<double> PrimusModel<double>::cast<double>() const;
template PrimusModel<float> replace_blocks_with_identity(const PrimusModel<float>&, const std::vector<std::size_t>&);
template PrimusModel<double> replace_blocks_with_identity(const PrimusModel<double>&, const std::vector<std::size_t>&);
template PrimusModel<float> replace_all_blocks_with_identity(const PrimusModel<float>&);
template PrimusModel<double> replace_all_blocks_with_identity(const PrimusModel<double>&);

}  // namespace primus
