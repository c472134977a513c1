#include "primus/experiments/grad_suite.hpp"

#include <random>
#include <string>

#include "primus/experiments/metrics.hpp"
#include "primus/model/masking.hpp"
#include "primus/model/model.hpp"
#include "primus/model/posenc.hpp"
#include "primus/numerics/ops.hpp"

namespace primus {

namespace {

Tensor<double> randn(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<double> t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Random projection to a scalar so every output entry reaches the gradient.
Var<double> project(Tape<double>& tape, const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 r(seed);
  return sum(mul(y, tape.constant(randn(y.shape(), r))));
}

}  // namespace

std::vector<GradCheckReport> op_grad_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckReport> out;
  GradCheckOptions opt;
  opt.tolerance = 1e-4;
  auto check = [&](const std::string& name, const OpFn& f, std::vector<Tensor<double>> in) {
    out.push_back(grad_check(name, f, std::move(in), opt));
  };

  const std::vector<Shape> shapes{{3, 4}, {2, 5}, {2, 3, 6}};
  for (std::size_t si = 0; si < shapes.size(); ++si) {
    const Shape& s = shapes[si];
    const std::size_t d = s.back(), r = s.size();
    const std::string tag = " " + to_string(s);
    check("add" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, add(v[0], v[1]), 1); },
          {randn(s, rng), randn({d}, rng)});
    check("sub" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, sub(v[0], v[1]), 2); },
          {randn(s, rng), randn(s, rng)});
    check("mul" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, mul(v[0], v[1]), 3); },
          {randn(s, rng), randn({d}, rng)});
    check("scale" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, scale(v[0], -1.7), 4); },
          {randn(s, rng)});
    check("scale_per_sample" + tag,
          [&](Tape<double>& t, const std::vector<Var<double>>& v) {
            std::vector<double> f(s[0]);
            for (std::size_t i = 0; i < f.size(); ++i) f[i] = 0.5 + i;
            return project(t, scale_per_sample(v[0], f), 5);
          },
          {randn(s, rng)});
    check("mean" + tag, [&](Tape<double>&, const std::vector<Var<double>>& v) { return mean(mul(v[0], v[0])); }, {randn(s, rng)});
    check("matmul" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, matmul(v[0], v[1]), 6); },
          {randn(s, rng), randn({d, 3}, rng)});
    check("linear" + tag,
          [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, linear(v[0], v[1], v[2]), 7); },
          {randn(s, rng), randn({4, d}, rng), randn({4}, rng)});
    check("reshape+permute" + tag,
          [&](Tape<double>& t, const std::vector<Var<double>>& v) {
            Shape flat{numel(s) / d, d};
            std::vector<std::size_t> axes{1, 0};
            return project(t, permute(reshape(v[0], flat), axes), 8);
          },
          {randn(s, rng)});
    check("transpose_last2" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, transpose_last2(v[0]), 9); },
          {randn(s, rng)});
    check("slice+concat" + tag,
          [&](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto a = slice(v[0], r - 1, 1, d - 1);
            return project(t, concat<double>({a, v[0]}, r - 1), 10);
          },
          {randn(s, rng)});
    check("index_select+index_scatter" + tag,
          [&](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto a = index_select(v[0], 0, {s[0] - 1, 0});
            return project(t, index_scatter(a, 0, {1, 0}, s[0] + 1), 11);
          },
          {randn(s, rng)});
    check("softmax" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, softmax(v[0]), 12); },
          {randn(s, rng)});
    check("log_softmax" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, log_softmax(v[0]), 13); },
          {randn(s, rng)});
    check("layer_norm" + tag,
          [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, layer_norm(v[0], v[1], v[2]), 14); },
          {randn(s, rng), randn({d}, rng), randn({d}, rng)});
    check("sigmoid" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, sigmoid(v[0]), 15); },
          {randn(s, rng)});
    check("silu" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, silu(v[0]), 16); },
          {randn(s, rng)});
    check("gelu" + tag, [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, gelu(v[0]), 17); },
          {randn(s, rng)});

    const std::size_t c = si + 1, k = 2 + si % 2;
    check("conv3d k" + std::to_string(k),
          [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, conv3d(v[0], v[1], v[2], {k, k, k}), 18); },
          {randn({1, c, 2 * k, k, 2 * k}, rng), randn({2, c, k, k, k}, rng), randn({2}, rng)});
    check("conv_transpose3d c" + std::to_string(c),
          [&](Tape<double>& t, const std::vector<Var<double>>& v) {
            return project(t, conv_transpose3d(v[0], v[1], v[2], {2, 2, 2}), 19);
          },
          {randn({2, c, 2, 1, 2}, rng), randn({c, 3, 2, 2, 2}, rng), randn({3}, rng)});
    check("layer_norm channel axis c" + std::to_string(c + 1),
          [&](Tape<double>& t, const std::vector<Var<double>>& v) {
            return project(t, layer_norm(v[0], v[1], v[2], 1e-6, std::size_t{1}), 20);
          },
          {randn({2, c + 1, 2, 2, 1}, rng), randn({c + 1}, rng), randn({c + 1}, rng)});

    // Model-level custom ops.
    const Shape rs = si == 0 ? Shape{1, 1, 4, 12} : (si == 1 ? Shape{2, 3, 2, 6} : Shape{1, 2, 5, 18});
    Rope3D rope(rs[3], 100.0, 0.5 + si);
    std::vector<Coord> coords;
    std::uniform_int_distribution<int> cd(-3, 9);
    for (std::size_t i = 0; i < rs[0] * rs[2]; ++i) coords.push_back({cd(rng), cd(rng), cd(rng)});
    coords.back() = kSentinel;
    check("apply_rope3d " + to_string(rs),
          [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, apply_rope3d(v[0], coords, rope), 21); },
          {randn(rs, rng)});
    const std::size_t n = 4 + si;
    check("add_learnable_pe n" + std::to_string(n),
          [&](Tape<double>& t, const std::vector<Var<double>>& v) { return project(t, add_learnable_pe(v[0], v[1]), 22); },
          {randn({2, n, 3}, rng), randn({n, 3}, rng)});
    std::vector<std::vector<std::size_t>> kept{{0, 2}, {n - 1, 1}};
    check("gather_tokens+scatter_tokens n" + std::to_string(n),
          [&](Tape<double>& t, const std::vector<Var<double>>& v) {
            return project(t, mul(scatter_tokens(gather_tokens(v[0], kept), kept, n), v[0]), 23);
          },
          {randn({2, n, 3}, rng)});
    const std::size_t classes = 2 + si % 2;
    const Dims3 ld{2, 1 + si, 3};
    std::vector<std::uint16_t> labels(2 * voxel_count(ld));
    for (auto& l : labels) l = static_cast<std::uint16_t>(rng() % classes);
    check("segmentation_loss C" + std::to_string(classes),
          [&](Tape<double>&, const std::vector<Var<double>>& v) { return segmentation_loss(v[0], labels); },
          {randn({2, classes, ld[0], ld[1], ld[2]}, rng)});
  }
  return out;
}

GradCheckReport model_grad_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PrimusConfig c = preset("nano");
  c.input_patch = {16, 16, 16};
  c.register_tokens = 1;
  c.use_lpe = true;
  PrimusModel<double> m = PrimusModel<float>(c, seed + 1).cast<double>();
  // Larger LayerScale so the blocks contribute visibly to the gradient.
  for (auto& b : m.blocks) {
    b.ls_attn.fill(0.5);
    b.ls_mlp.fill(0.5);
  }
  Tensor<double> x = randn({1, 1, 16, 16, 16}, rng);
  Tensor<double> target = randn({1, 2, 16, 16, 16}, rng);
  std::vector<Tensor<double>*> inputs;
  for (auto& p : m.parameters()) inputs.push_back(p.tensor);
  GradCheckOptions opt;
  opt.tolerance = 1e-3;
  opt.max_entries_per_input = 6;
  opt.seed = seed;
  return grad_check(
      "nano model", [&](Tape<double>& t) { return mean(mul(m.forward(t, x), t.constant(target))); }, inputs, opt);
}

}  // namespace primus
