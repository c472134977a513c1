#include "primus/analysis/accounting.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

namespace primus {

std::size_t block_params(const PrimusConfig& c) {
  const std::size_t d = c.embed_dim, h = c.hidden_dim();
  std::size_t n = 0;
  n += 2 * d;              // norm1
  n += 3 * d * d + 3 * d;  // fused qkv
  n += d * d + d;          // output projection
  if (c.post_attn_norm) n += 2 * d;
  n += 2 * d;                  // norm2
  n += 2 * (d * h + h);        // gate and value projections
  n += 2 * h;                  // inner norm
  n += h * d + d;              // output projection
  if (c.layer_scale) n += 2 * d;
  return n;
}

ParamCounts count_params(const PrimusConfig& c, std::size_t identity_blocks) {
  c.validate();
  if (identity_blocks > c.layers) throw ConfigError("more identity blocks than layers");
  ParamCounts p;
  const std::size_t d = c.embed_dim, k = c.patch_size;
  p.tr = (c.layers - identity_blocks) * block_params(c);
  p.non_tr = d * c.in_channels * k * k * k + d + c.register_tokens * d;
  std::size_t c_in = d;
  for (std::size_t w : c.decoder_channels()) {
    p.non_tr += c_in * w * 8 + w + (c.decoder_norm ? 2 * w : 0);
    c_in = w;
  }
  p.non_tr += c.num_classes * c_in + c.num_classes;
  p.lpe = c.use_lpe ? c.tokens() * d : 0;
  p.total = p.tr + p.non_tr + p.lpe;
  return p;
}

template <typename T>
ParamCounts count_params(const PrimusModel<T>& model) {
  ParamCounts p;
  for (const auto& e : model.parameters()) {
    if (!e.active) continue;
    const std::size_t n = e.tensor->size();
    switch (e.category) {
      case ParamCategory::transformer: p.tr += n; break;
      case ParamCategory::non_transformer: p.non_tr += n; break;
      case ParamCategory::lpe: p.lpe += n; break;
    }
  }
  p.total = p.tr + p.non_tr + p.lpe;
  return p;
}

template ParamCounts count_params(const PrimusModel<float>&);
template ParamCounts count_params(const PrimusModel<double>&);

double unet_index(double non_tr_params, double reference) {
  if (!(reference > 0)) throw DomainError("UNet reference parameter count must be > 0");
  return non_tr_params / reference;
}

double FlopEstimate::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r.flops;
  return 0.0;
}

FlopEstimate estimate_flops(const PrimusConfig& c, const Dims3& input, const FlopConvention& conv, std::size_t identity_blocks) {
  c.validate();
  const double k = double(c.patch_size);
  for (int i = 0; i < 3; ++i)
    if (input[i] % c.patch_size) {
      throw ShapeError("input patch " + to_string(input) + " not divisible by patch size " + std::to_string(c.patch_size));
    }
  const double e = conv.per_elementwise;
  const double d = double(c.embed_dim), h = double(c.hidden_dim()), cin = double(c.in_channels);
  const double grid = double(voxel_count(input)) / (k * k * k);
  const double N = grid + double(c.register_tokens);
  const double L = double(c.layers - identity_blocks), H = double(c.heads);

  FlopEstimate f;
  f.rows.push_back({"tokenizer", 2 * grid * k * k * k * cin * d, false});
  const double linear = 2 * N * d * 3 * d + 2 * N * d * d + 2 * 2 * N * d * h + 2 * N * h * d;
  const double norms = e * N * d * (2 + (c.post_attn_norm ? 1 : 0)) + e * N * h;
  f.rows.push_back({"linear", L * linear, true});
  f.rows.push_back({"attention_matmul", L * 2 * (2 * N * N * d), true});
  f.rows.push_back({"softmax", L * e * H * N * N, true});
  f.rows.push_back({"norm_act", L * (norms + e * N * h), true});
  f.rows.push_back({"rope", c.use_rope ? L * e * 2 * N * d : 0.0, true});
  double dec = 0, vox = grid, c_in = d;
  for (std::size_t w : c.decoder_channels()) {
    vox *= 8;
    dec += 2 * vox * c_in * double(w) + e * vox * double(w) * (c.decoder_norm ? 2 : 1);
    c_in = double(w);
  }
  f.rows.push_back({"decoder", dec, false});
  f.rows.push_back({"head", 2 * vox * c_in * double(c.num_classes), false});
  for (const auto& r : f.rows) {
    f.total += r.flops;
    if (r.transformer) f.tr += r.flops;
  }
  return f;
}

ArchitectureReport make_report(const PrimusConfig& cfg, const Dims3& input_patch, double unet_reference, const std::string& name,
                               std::size_t identity_blocks) {
  ArchitectureReport r;
  r.name = name;
  r.input_patch = input_patch;
  r.params = count_params(cfg, identity_blocks);
  r.unet_reference = unet_reference;
  r.unet_index = unet_index(double(r.params.non_tr), unet_reference);
  r.flops = estimate_flops(cfg, input_patch, {}, identity_blocks);
  return r;
}

namespace {
double round2(double v) { return std::round(v * 100.0) / 100.0; }
}  // namespace

nlohmann::json report_to_json(const ArchitectureReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.flops.rows) rows.push_back({{"module", row.name}, {"flops", row.flops}, {"transformer", row.transformer}});
  return {
      {"name", r.name},
      {"input_patch", r.input_patch},
      {"total_params", r.params.total},
      {"tr_params", r.params.tr},
      {"non_tr_params", r.params.non_tr},
      {"lpe_params", r.params.lpe},
      {"unet_reference_params", r.unet_reference},
      {"unet_index", round2(r.unet_index)},
      {"flops_total", r.flops.total},
      {"flops_tr", r.flops.tr},
      {"flops_tr_fraction", r.flops.tr_fraction()},
      {"breakdown", rows},
  };
}

std::string report_to_text(const ArchitectureReport& r) {
  std::ostringstream os;
  auto line = [&](const std::string& k, const std::string& v) { os << std::left << std::setw(22) << k << std::right << std::setw(18) << v << "\n"; };
  auto num = [](double v, int prec = 0) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  if (!r.name.empty()) line("model", r.name);
  line("input_patch", to_string(r.input_patch));
  line("total_params", num(double(r.params.total)));
  line("tr_params", num(double(r.params.tr)));
  line("non_tr_params", num(double(r.params.non_tr)));
  line("lpe_params", num(double(r.params.lpe)));
  line("unet_index", num(r.unet_index, 2));
  line("flops_total [G]", num(r.flops.total / 1e9, 3));
  line("flops_tr [G]", num(r.flops.tr / 1e9, 3));
  line("flops_tr_fraction", num(r.flops.tr_fraction(), 4));
  for (const auto& row : r.flops.rows) line("  " + row.name + (row.transformer ? " (TR)" : ""), num(row.flops / 1e9, 3));
  return os.str();
}

}  // namespace primus
