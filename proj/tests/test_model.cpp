#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "primus/model/checkpoint.hpp"
#include "primus/model/masking.hpp"
#include "primus/model/model.hpp"
#include "primus/numerics/grad_check.hpp"
#include "primus/numerics/ops.hpp"
#include "test_util.hpp"

using namespace primus;
using primus::testing::max_abs_diff;
using primus::testing::random_tensor;

namespace {

PrimusConfig nano(Dims3 dims = {16, 16, 16}) {
  PrimusConfig c = preset("nano");
  c.input_patch = dims;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("primus_test_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("nano forward shapes and internal sequence length") {
  std::mt19937_64 rng(1);
  PrimusModel<float> m(nano(), 1);
  std::vector<std::pair<std::string, Shape>> seen;
  ForwardOptions<float> opt;
  opt.capture = [&](const std::string& tag, const Var<float>& v) { seen.emplace_back(tag, v.shape()); };
  Tape<float> tape(false);
  auto y = m.forward(tape, random_tensor<float>({1, 1, 16, 16, 16}, rng), opt);
  CHECK(y.shape() == Shape{1, 2, 16, 16, 16});
  REQUIRE(seen.size() == 4);  // layers + 2 tag groups
  CHECK(seen[0].first == "tokens");
  CHECK(seen[1].first == "block_0");
  CHECK(seen[3].first == "pre_decoder");
  CHECK(seen[0].second == Shape{1, 8, 48});

  // With k=4 the same 16^3 input yields a 64-token sequence.
  PrimusConfig c4 = nano();
  c4.patch_size = 4;
  PrimusModel<float> m4(c4, 1);
  seen.clear();
  Tape<float> t4(false);
  auto y4 = m4.forward(t4, random_tensor<float>({1, 1, 16, 16, 16}, rng), opt);
  CHECK(y4.shape() == Shape{1, 2, 16, 16, 16});
  CHECK(seen[0].second == Shape{1, 64, 48});
}

TEST_CASE("presets") {
  CHECK(preset("primus-s").layers == 12);
  CHECK(preset("primus-b").heads == 12);
  CHECK(preset("primus-m").embed_dim == 864);
  CHECK(preset("primus-l").layers == 24);
  CHECK(preset("primus-l").head_dim() == 66);
  CHECK(preset("primus-m").head_dim() == 72);
  CHECK_THROWS_AS(preset("primus-xl"), ConfigError);
  for (const auto& n : preset_names()) CHECK_NOTHROW(preset(n).validate());
  CHECK(default_decoder_schedule(48, 8) == std::vector<std::size_t>{8, 8, 8});
  CHECK(default_decoder_schedule(864, 8) == std::vector<std::size_t>{108, 13, 8});
}

TEST_CASE("config validation and JSON") {
  PrimusConfig c = nano();
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = nano();
  c.heads = 2;  // head_dim 24 is fine; 48/8 = 6 also fine
  CHECK_NOTHROW(c.validate());
  c.embed_dim = 64;  // head_dim 32 breaks 3D RoPE
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.use_rope = false;
  CHECK_NOTHROW(c.validate());
  c = nano();
  c.input_patch = {16, 20, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = nano();
  c.decoder_schedule = {8, 8};
  CHECK_THROWS_AS(c.validate(), ConfigError);

  PrimusConfig full = preset("primus-b");
  full.register_tokens = 4;
  full.rope_fov = 0.5;
  CHECK(config_from_json(to_json(full)) == full);
  CHECK(config_from_json({{"preset", "primus-m"}, {"layers", 3}}).layers == 3);
  CHECK(config_from_json({{"preset", "primus-m"}, {"input_patch", "32x64x96"}}).input_patch == Dims3{32, 64, 96});
  CHECK_THROWS_AS(config_from_json({{"layrs", 3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"layers", "three"}}), ConfigError);
  CHECK(parse_dims("24") == Dims3{24, 24, 24});
  CHECK_THROWS_AS(parse_dims("24x24"), ConfigError);
  CHECK_THROWS_AS(parse_dims("axb"), ConfigError);
}

TEST_CASE("parameter walk is stable and complete") {
  PrimusConfig c = nano();
  c.use_lpe = true;
  c.register_tokens = 2;
  PrimusModel<float> m(c, 1);
  auto params = m.parameters();
  std::set<std::string> names;
  for (const auto& p : params) names.insert(p.name);
  CHECK(names.size() == params.size());
  CHECK(names.count("lpe"));
  CHECK(names.count("registers"));
  CHECK(names.count("blocks.1.mlp.norm.gamma"));
  auto zero = PrimusModel<float>::zeros(c);
  CHECK(zero.parameter_count() == m.parameter_count());
  for (const auto& p : zero.parameters())
    for (float v : p.tensor->data()) REQUIRE(v == 0.0f);
  // Same seed, same weights; different seed, different weights.
  PrimusModel<float> m2(c, 1), m3(c, 2);
  CHECK(*m2.parameters()[0].tensor == *params[0].tensor);
  CHECK(!(*m3.parameters()[0].tensor == *params[0].tensor));
}

TEST_CASE("eval forward is a pure function") {
  std::mt19937_64 rng(2);
  PrimusConfig c = nano();
  c.register_tokens = 2;
  c.use_lpe = true;
  PrimusModel<float> m(c, 3);
  auto x = random_tensor<float>({2, 1, 16, 16, 16}, rng);
  Tape<float> t1(false), t2(false);
  std::mt19937_64 g1(1), g2(2);
  ForwardOptions<float> o1, o2;
  o1.rng = &g1;
  o2.rng = &g2;
  CHECK(m.forward(t1, x, o1).value() == m.forward(t2, x, o2).value());
}

TEST_CASE("identity replacement") {
  std::mt19937_64 rng(4);
  auto x = random_tensor<float>({2, 1, 16, 16, 16}, rng);
  for (bool regs : {false, true}) {
    PrimusConfig c = nano();
    c.use_lpe = true;
    c.register_tokens = regs ? 3 : 0;
    PrimusModel<float> m(c, 5);
    SUBCASE("replace all equals the tokenizer + PE + decoder composition bitwise") {
      auto id = replace_all_blocks_with_identity(m);
      Tape<float> t(false);
      CHECK(id.forward(t, x).value() == id.forward_without_blocks(t, x).value());
    }
    SUBCASE("replace none leaves outputs bitwise unchanged") {
      auto same = replace_blocks_with_identity(m, {});
      Tape<float> t(false);
      CHECK(same.forward(t, x).value() == m.forward(t, x).value());
    }
    SUBCASE("replacing block 0 equals a one-block model with block 1's weights") {
      auto id = replace_blocks_with_identity(m, {0});
      PrimusConfig c1 = c;
      c1.layers = 1;
      PrimusModel<float> small = PrimusModel<float>::zeros(c1);
      small.embed = m.embed;
      small.lpe = m.lpe;
      small.registers = m.registers;
      small.blocks[0] = m.blocks[1];
      small.decoder = m.decoder;
      Tape<float> t(false);
      CHECK(max_abs_diff(id.forward(t, x).value(), small.forward(t, x).value()) <= 1e-6);
    }
  }
  PrimusModel<float> m(nano(), 1);
  CHECK_THROWS_AS(replace_blocks_with_identity(m, {2}), ConfigError);
}

TEST_CASE("masking: counts and degenerate cases") {
  std::mt19937_64 rng(6);
  const Dims3 g{4, 4, 4};
  auto full = plan_mask(g, MaskStrategy::structured, 0.0, rng).kept;
  REQUIRE(full.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(full[i] == i);
  auto r = plan_mask(g, MaskStrategy::random, 0.5, rng).kept;
  CHECK(r.size() == 32);
  CHECK(std::set<std::size_t>(r.begin(), r.end()).size() == 32);
  CHECK_THROWS_AS(plan_mask(g, MaskStrategy::random, 0.995, rng), ConfigError);
  CHECK_THROWS_AS(plan_mask(g, MaskStrategy::random, 1.0, rng), ConfigError);
  CHECK_THROWS_AS(parse_mask_strategy("blocky"), ConfigError);
  // sparsity 0.75 structured keeps exactly one whole slice
  for (int i = 0; i < 20; ++i) {
    auto p = plan_mask(g, MaskStrategy::structured, 0.75, rng);
    CHECK(p.kept.size() == 16);
    CHECK(p.full_slices == 1);
    CHECK(p.partial_count == 0);
  }
}

TEST_CASE("masking: structured sets are a slab plus one partial neighbour slice") {
  std::mt19937_64 rng(7);
  const Dims3 g{4, 4, 4};
  for (double s : {0.25, 0.5, 0.75, 0.875, 0.3, 0.6}) {
    const std::size_t K = kept_count(64, s);
    for (int trial = 0; trial < 50; ++trial) {
      auto p = plan_mask(g, MaskStrategy::structured, s, rng);
      REQUIRE(p.kept.size() == K);
      // some axis must explain the set
      bool explained = false;
      for (int axis = 0; axis < 3 && !explained; ++axis) {
        std::vector<std::size_t> per(4, 0);
        for (std::size_t i : p.kept) {
          const std::size_t c[3] = {i / 16, (i / 4) % 4, i % 4};
          ++per[c[axis]];
        }
        std::vector<std::size_t> full, partial;
        bool ok = true;
        for (std::size_t sl = 0; sl < 4; ++sl) {
          if (per[sl] == 16) full.push_back(sl);
          else if (per[sl] > 0) partial.push_back(sl);
        }
        ok = partial.size() <= 1;
        for (std::size_t j = 1; j < full.size(); ++j) ok = ok && full[j] == full[j - 1] + 1;
        if (ok && !partial.empty() && !full.empty()) ok = partial[0] + 1 == full.front() || partial[0] == full.back() + 1;
        ok = ok && full.size() == K / 16 && (partial.empty() ? K % 16 == 0 : per[partial[0]] == K % 16);
        explained = ok;
      }
      CHECK(explained);
    }
  }
}

TEST_CASE("masked forward consumes only kept tokens") {
  std::mt19937_64 rng(8);
  PrimusConfig c = nano({32, 32, 32});
  c.register_tokens = 2;
  PrimusModel<float> m(c, 9);
  auto x = random_tensor<float>({2, 1, 32, 32, 32}, rng);
  std::vector<std::vector<std::size_t>> keep;
  for (int b = 0; b < 2; ++b) keep.push_back(plan_mask(c.grid(), MaskStrategy::random, 0.5, rng).kept);
  // Zero every dropped patch of the input.
  auto y = x;
  const Dims3 g = c.grid();
  for (std::size_t b = 0; b < 2; ++b) {
    std::set<std::size_t> kept(keep[b].begin(), keep[b].end());
    for (std::size_t z = 0; z < 32; ++z)
      for (std::size_t yy = 0; yy < 32; ++yy)
        for (std::size_t xx = 0; xx < 32; ++xx) {
          const std::size_t tok = ((z / 8) * g[1] + yy / 8) * g[2] + xx / 8;
          if (!kept.count(tok)) y[((b * 32 + z) * 32 + yy) * 32 + xx] = 0.0f;
        }
  }
  auto run = [&](const Tensor<float>& in) {
    Tensor<float> last;
    ForwardOptions<float> o;
    o.keep = &keep;
    o.capture = [&](const std::string& tag, const Var<float>& v) {
      if (tag == "block_1") last = v.value();
    };
    Tape<float> t(false);
    m.forward(t, in, o);
    return last;
  };
  auto a = run(x), b = run(y);
  CHECK(a.shape() == Shape{2, 32, 48});
  CHECK(a == b);
}

TEST_CASE("mask_tokens carries coordinates") {
  std::mt19937_64 rng(10);
  Tape<double> tape(false);
  TokenSequence<double> t{tape.constant(random_tensor({2, 8, 3}, rng)), {2, 2, 2}, {}};
  for (int b = 0; b < 2; ++b)
    for (auto p : grid_coords({2, 2, 2})) t.coords.push_back(p);
  std::vector<std::vector<std::size_t>> kept;
  auto m = mask_tokens(t, MaskStrategy::random, 0.5, rng, &kept);
  REQUIRE(m.length() == 4);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(m.coords[b * 4 + j] == t.coords[b * 8 + kept[b][j]]);
      for (std::size_t c = 0; c < 3; ++c) CHECK(m.tokens.value()[(b * 4 + j) * 3 + c] == t.tokens.value()[(b * 8 + kept[b][j]) * 3 + c]);
    }
  auto rep = grad_check(
      "gather/scatter",
      [&](Tape<double>& tp, const std::vector<Var<double>>& v) {
        return sum(mul(scatter_tokens(gather_tokens(v[0], kept), kept, 8), v[0]));
      },
      {random_tensor({2, 8, 3}, rng)});
  CHECK(rep.pass());
}

TEST_CASE("checkpoint round trip") {
  PrimusConfig c = nano();
  c.register_tokens = 1;
  c.use_lpe = true;
  PrimusModel<float> m(c, 11);
  m.set_identity(1);
  const auto p1 = temp_path("a.pck"), p2 = temp_path("b.pck");
  save_checkpoint(p1, m);
  auto back = load_checkpoint(p1);
  CHECK(back.config() == m.config());
  CHECK(back.identity_blocks() == m.identity_blocks());
  auto pa = m.parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].tensor == *pb[i].tensor);
  save_checkpoint(p2, back);
  CHECK(slurp(p1) == slurp(p2));
  {
    std::fstream f(p1, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(p1), FormatError);
  std::filesystem::resize_file(p2, std::filesystem::file_size(p2) - 8);
  CHECK_THROWS_AS(load_checkpoint(p2), FormatError);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("full nano gradient check in 64-bit") {
  std::mt19937_64 rng(12);
  PrimusConfig c = nano();
  c.register_tokens = 1;
  c.use_lpe = true;
  PrimusModel<double> m = PrimusModel<float>(c, 13).cast<double>();
  // Larger LayerScale so the blocks contribute visibly to the gradient.
  for (auto& b : m.blocks) {
    b.ls_attn.fill(0.5);
    b.ls_mlp.fill(0.5);
  }
  auto x = random_tensor({1, 1, 16, 16, 16}, rng);
  auto target = random_tensor({1, 2, 16, 16, 16}, rng);
  std::vector<Tensor<double>*> inputs;
  for (auto& p : m.parameters()) inputs.push_back(p.tensor);
  GradCheckOptions opts;
  opts.tolerance = 1e-3;
  opts.max_entries_per_input = 6;
  opts.seed = 1;
  auto rep = grad_check(
      "nano", [&](Tape<double>& t) { return mean(mul(m.forward(t, x), t.constant(target))); }, inputs, opts);
  INFO("worst " << rep.worst());
  CHECK(rep.pass());
}
