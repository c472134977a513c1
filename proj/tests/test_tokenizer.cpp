#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "primus/model/model.hpp"
#include "primus/model/tokenizer.hpp"
#include "primus/numerics/ops.hpp"
#include "test_util.hpp"

using namespace primus;
using primus::testing::max_abs_diff;
using primus::testing::random_tensor;

namespace {

PatchEmbedWeights<double> random_embed(std::size_t d, std::size_t c, std::size_t k, std::mt19937_64& rng, bool bias = true) {
  PatchEmbedWeights<double> w{random_tensor({d, c, k, k, k}, rng, 0.1), Tensor<double>({d})};
  if (bias) w.b = random_tensor({d}, rng);
  return w;
}

TokenSequence<double> run_tokenize(Tape<double>& tape, const Tensor<double>& x, const PatchEmbedWeights<double>& w, std::size_t k) {
  return tokenize(tape.constant(x), w, k);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("primus_test_" + name)).string();
}

}  // namespace

TEST_CASE("tokenize grid arithmetic") {
  std::mt19937_64 rng(1);
  Tape<double> tape(false);
  auto t = run_tokenize(tape, Tensor<double>({1, 1, 96, 96, 96}), random_embed(2, 1, 8, rng), 8);
  CHECK(t.grid == Dims3{12, 12, 12});
  CHECK(t.length() == 1728);
  CHECK(t.coords.size() == 1728);
  CHECK(t.coords[1] == Coord{0, 0, 1});
  CHECK(t.coords[12] == Coord{0, 1, 0});
  CHECK(t.coords[1727] == Coord{11, 11, 11});
}

TEST_CASE("degenerate single-token grid equals the full-volume response") {
  std::mt19937_64 rng(2);
  auto x = random_tensor({1, 1, 16, 16, 16}, rng);
  auto w = random_embed(3, 1, 16, rng);
  Tape<double> tape(false);
  auto t = run_tokenize(tape, x, w, 16);
  REQUIRE(t.length() == 1);
  for (std::size_t o = 0; o < 3; ++o) {
    double ref = w.b[o];
    for (std::size_t i = 0; i < x.size(); ++i) ref += x[i] * w.w[o * x.size() + i];
    CHECK(std::abs(t.tokens.value()[o] - ref) <= 1e-10);
  }
}

TEST_CASE("tokens match the patch-wise convolution oracle") {
  std::mt19937_64 rng(3);
  const std::size_t k = 4, C = 2, D = 5;
  auto x = random_tensor({1, C, 8, 12, 4}, rng);
  auto w = random_embed(D, C, k, rng);
  Tape<double> tape(false);
  auto t = run_tokenize(tape, x, w, k);
  REQUIRE(t.grid == Dims3{2, 3, 1});
  for (std::size_t n = 0; n < t.length(); ++n) {
    const Coord p = t.coords[n];
    for (std::size_t o = 0; o < D; ++o) {
      double ref = w.b[o];
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b)
            for (std::size_t e = 0; e < k; ++e)
              ref += w.w[(((o * C + c) * k + a) * k + b) * k + e] *
                     x[((c * 8 + p.z * k + a) * 12 + p.y * k + b) * 4 + p.x * k + e];
      CHECK(std::abs(t.tokens.value()[n * D + o] - ref) <= 1e-10);
    }
  }
}

TEST_CASE("zero volume with zero bias gives zero tokens") {
  std::mt19937_64 rng(4);
  Tape<double> tape(false);
  auto t = run_tokenize(tape, Tensor<double>({1, 1, 16, 16, 16}), random_embed(4, 1, 8, rng, false), 8);
  for (double v : t.tokens.value().data()) CHECK(v == 0.0);
}

TEST_CASE("non-divisible dims report the required padding") {
  std::mt19937_64 rng(5);
  Tape<double> tape(false);
  try {
    run_tokenize(tape, Tensor<double>({1, 1, 16, 20, 16}), random_embed(2, 1, 8, rng), 8);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("pad by 4") != std::string::npos);
    CHECK(msg.find("24") != std::string::npos);
  }
}

TEST_CASE("tokenize is linear without bias") {
  std::mt19937_64 rng(6);
  auto w = random_embed(6, 1, 4, rng, false);
  auto v1 = random_tensor({1, 1, 8, 8, 8}, rng), v2 = random_tensor({1, 1, 8, 8, 8}, rng);
  const double a = 0.7, b = -1.3;
  Tensor<double> mix(v1.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * v1[i] + b * v2[i];
  Tape<double> tape(false);
  auto t1 = run_tokenize(tape, v1, w, 4).tokens.value(), t2 = run_tokenize(tape, v2, w, 4).tokens.value();
  auto tm = run_tokenize(tape, mix, w, 4).tokens.value();
  for (std::size_t i = 0; i < tm.size(); ++i) CHECK(std::abs(tm[i] - (a * t1[i] + b * t2[i])) <= 1e-6);
}

TEST_CASE("permuting voxels within one patch only changes that patch") {
  std::mt19937_64 rng(7);
  auto x = random_tensor({1, 1, 8, 8, 8}, rng);
  PatchEmbedWeights<double> ones{Tensor<double>({1, 1, 4, 4, 4}, 1.0), Tensor<double>({1})};
  auto general = random_embed(3, 1, 4, rng);
  Tensor<double> y = x;
  // swap two voxels inside patch (1,0,1)
  std::swap(y[(4 * 8 + 1) * 8 + 5], y[(7 * 8 + 3) * 8 + 6]);
  Tape<double> tape(false);
  auto a = run_tokenize(tape, x, ones, 4).tokens.value(), b = run_tokenize(tape, y, ones, 4).tokens.value();
  CHECK(max_abs_diff(a, b) <= 1e-12);
  auto ga = run_tokenize(tape, x, general, 4).tokens.value(), gb = run_tokenize(tape, y, general, 4).tokens.value();
  const std::size_t changed = 4 + 1;  // grid index of (1,0,1) on a 2x2x2 grid
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t o = 0; o < 3; ++o) {
      if (n != changed) CHECK(ga[n * 3 + o] == gb[n * 3 + o]);
    }
}

TEST_CASE("volume convenience overload") {
  std::mt19937_64 rng(8);
  Volume v(1, {16, 16, 8});
  for (auto& x : v.data) x = float(std::normal_distribution<double>()(rng));
  PatchEmbedWeights<float> w{Tensor<float>({4, 1, 8, 8, 8}, 0.01f), Tensor<float>({4}, 0.5f)};
  auto t = tokenize(v, w, 8);
  CHECK(t.shape() == Shape{4, 4});
}

TEST_CASE("decode shapes and errors") {
  std::mt19937_64 rng(9);
  auto make_decoder = [&](std::size_t d, std::vector<std::size_t> widths, std::size_t classes, bool norm) {
    DecoderWeights<double> w;
    std::size_t c_in = d;
    for (std::size_t c : widths) {
      DecoderStageWeights<double> s{random_tensor({c_in, c, 2, 2, 2}, rng, 0.3), random_tensor({c}, rng), {}};
      if (norm) s.norm = {Tensor<double>({c}, 1.0), Tensor<double>({c}, 0.0)};
      w.stages.push_back(s);
      c_in = c;
    }
    w.head_w = random_tensor({classes, c_in, 1, 1, 1}, rng);
    w.head_b = random_tensor({classes}, rng);
    return w;
  };
  Tape<double> tape(false);
  SUBCASE("2x2x2 grid, k=8, three stride-2 stages") {
    TokenSequence<double> t{tape.constant(random_tensor({1, 8, 6}, rng)), {2, 2, 2}, grid_coords({2, 2, 2})};
    auto y = decode(t, make_decoder(6, {8, 8, 8}, 3, true), 8);
    CHECK(y.shape() == Shape{1, 3, 16, 16, 16});
  }
  SUBCASE("zero tokens and biases without norm give zero scores") {
    auto w = make_decoder(6, {4, 4}, 2, false);
    for (auto& s : w.stages) s.b.fill(0);
    w.head_b.fill(0);
    TokenSequence<double> t{tape.constant(Tensor<double>({2, 8, 6})), {2, 2, 2}, {}};
    auto y = decode(t, w, 4);
    CHECK(y.shape() == Shape{2, 2, 8, 8, 8});
    for (double v : y.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("stage strides must multiply to k") {
    TokenSequence<double> t{tape.constant(random_tensor({1, 8, 6}, rng)), {2, 2, 2}, {}};
    CHECK_THROWS_AS(decode(t, make_decoder(6, {8, 8}, 2, true), 8), ConfigError);
  }
}

TEST_CASE("round trip: output dims equal input dims over random configs") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 12; ++trial) {
    PrimusConfig cfg;
    const std::size_t ks[] = {4, 8, 16};
    cfg.patch_size = ks[rng() % 3];
    cfg.layers = 1 + rng() % 2;
    cfg.heads = 1 + rng() % 2;
    cfg.embed_dim = 12 * cfg.heads;
    cfg.register_tokens = rng() % 3;
    cfg.use_lpe = rng() % 2;
    cfg.num_classes = 2 + rng() % 3;
    cfg.in_channels = 1 + rng() % 2;
    for (auto& d : cfg.input_patch) d = cfg.patch_size * (1 + rng() % (cfg.patch_size == 16 ? 2 : 3));
    PrimusModel<float> model(cfg, trial);
    Tape<float> tape(false);
    auto x = random_tensor<float>({1, cfg.in_channels, cfg.input_patch[0], cfg.input_patch[1], cfg.input_patch[2]}, rng);
    auto y = model.forward(tape, x);
    INFO("k=" << cfg.patch_size << " dims " << to_string(cfg.input_patch));
    CHECK(y.shape() == Shape{1, cfg.num_classes, cfg.input_patch[0], cfg.input_patch[1], cfg.input_patch[2]});
  }
}

TEST_CASE("PVL1 round trip") {
  Volume v(2, {3, 4, 5});
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = float(i) * 0.5f - 3.0f;
  LabelVolume l({3, 4, 5});
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = std::uint16_t(i % 3);
  const auto pv = temp_path("vol.pvl"), pl = temp_path("lab.pvl");
  write_volume(pv, v);
  write_labels(pl, l);
  auto v2 = read_volume(pv);
  auto l2 = read_labels(pl);
  CHECK(v2.channels == 2);
  CHECK(v2.dims == v.dims);
  CHECK(v2.data == v.data);
  CHECK(l2.labels == l.labels);
  CHECK(std::filesystem::file_size(pv) == 4 + 6 * 4 + v.data.size() * 4);
  CHECK_THROWS_AS(read_labels(pv), FormatError);
  CHECK_THROWS_AS(read_volume(pl), FormatError);
  CHECK_NOTHROW(validate_labels(l2, 3));
  CHECK_THROWS_AS(validate_labels(l2, 2), ShapeError);
  {
    std::FILE* f = std::fopen(pv.c_str(), "r+b");
    std::fputc('X', f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_volume(pv), FormatError);
  std::filesystem::remove(pv);
  std::filesystem::remove(pl);
}
