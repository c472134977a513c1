#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "primus/experiments/ablation.hpp"
#include "primus/experiments/grad_suite.hpp"
#include "primus/experiments/metrics.hpp"
#include "primus/experiments/optim.hpp"
#include "primus/experiments/run_config.hpp"
#include "primus/experiments/synthetic.hpp"
#include "primus/experiments/train.hpp"
#include "primus/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace primus;
using primus::testing::random_tensor;

namespace {

PrimusConfig nano_for(const SyntheticTask& task) {
  PrimusConfig c = preset("nano");
  c.input_patch = task.dims;
  c.num_classes = task.num_classes;
  return c;
}

TrainRecipe short_recipe(std::size_t steps) {
  TrainRecipe r;
  r.steps_per_epoch = steps;
  r.epochs = 1;
  r.eval_samples = 2;
  return r;
}

// Straight-loop reference for the compound loss.
double reference_loss(const Tensor<double>& s, const std::vector<std::uint16_t>& y, const std::vector<double>* w,
                      double smooth) {
  const std::size_t B = s.dim(0), C = s.dim(1), V = s.size() / (B * C);
  auto at = [&](std::size_t b, std::size_t c, std::size_t v) { return s[(b * C + c) * V + v]; };
  std::vector<double> p(s.size());
  double ce = 0, wsum = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < V; ++v) {
      double z = 0;
      for (std::size_t c = 0; c < C; ++c) z += std::exp(at(b, c, v));
      for (std::size_t c = 0; c < C; ++c) p[(b * C + c) * V + v] = std::exp(at(b, c, v)) / z;
      const double wi = w ? (*w)[b * V + v] : 1.0;
      ce += -wi * std::log(p[(b * C + y[b * V + v]) * V + v]);
      wsum += wi;
    }
  ce /= wsum;
  double dsc = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 1; c < C; ++c) {
      double inter = 0, sum = 0;
      for (std::size_t v = 0; v < V; ++v) {
        const double wi = w ? (*w)[b * V + v] : 1.0;
        const double t = y[b * V + v] == c ? 1.0 : 0.0;
        inter += wi * p[(b * C + c) * V + v] * t;
        sum += wi * (p[(b * C + c) * V + v] + t);
      }
      dsc += (2 * inter + smooth) / (sum + smooth);
    }
  return ce + 1.0 - dsc / static_cast<double>(B * (C - 1));
}

}  // namespace

TEST_CASE("synthetic samples are deterministic in seed, index and split") {
  for (TaskKind kind : {TaskKind::blobs, TaskKind::position_dependent, TaskKind::small_lesions}) {
    SyntheticTask t = make_task(kind, {24, 24, 24}, 5);
    Sample a = generate_sample(t, 3), b = generate_sample(t, 3);
    CHECK(a.image.data == b.image.data);
    CHECK(a.label.labels == b.label.labels);
    CHECK(sample_hash(a) == sample_hash(b));
    CHECK(sample_hash(a) != sample_hash(generate_sample(t, 4)));
    CHECK(sample_hash(a) != sample_hash(generate_sample(t, 3, Split::heldout)));
    t.seed = 6;
    CHECK(sample_hash(a) != sample_hash(generate_sample(t, 3)));
  }
}

TEST_CASE("noise-free blobs: labels equal the thresholded intensity bands") {
  for (std::size_t classes : {2u, 3u, 4u}) {
    SyntheticTask t = make_task(TaskKind::blobs, {24, 24, 24}, 1);
    t.num_classes = classes;
    t.noise_std = 0.0;
    t.radius_min = 2.0;
    t.radius_max = 4.0;
    for (std::uint64_t i = 0; i < 5; ++i) {
      Sample s = generate_sample(t, i);
      std::set<std::uint16_t> seen;
      bool exact = true;
      for (std::size_t v = 0; v < s.image.data.size(); ++v) {
        const long band = std::lround(s.image.data[v]);
        exact = exact && band == s.label.labels[v] && static_cast<float>(band) == s.image.data[v];
        seen.insert(s.label.labels[v]);
      }
      CHECK(exact);
      CHECK(seen.size() == classes);
    }
  }
}

TEST_CASE("position_dependent: mirroring along x swaps the two foreground labels") {
  for (Dims3 dims : {Dims3{24, 24, 24}, Dims3{16, 16, 16}, Dims3{32, 32, 32}}) {
    SyntheticTask t = make_task(TaskKind::position_dependent, dims, 2);
    t.noise_std = 0.0;
    const std::size_t X = dims[2];
    for (std::uint64_t i = 0; i < 10; ++i) {
      Sample s = generate_sample(t, i);
      bool ok = true;
      std::size_t left = 0, right = 0;
      for (std::size_t z = 0; z < dims[0]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
          for (std::size_t x = 0; x < X; ++x) {
            const std::uint16_t l = s.label.at(z, y, x);
            // The labelling rule applied to the mirrored image: foreground left of the midline is class 1.
            const std::size_t mx = X - 1 - x;
            const bool fg = s.image.at(0, z, y, x) > 0.5f;
            const std::uint16_t rule_on_mirror = fg ? (mx < X / 2 ? 1 : 2) : 0;
            const std::uint16_t swapped = l == 1 ? 2 : (l == 2 ? 1 : 0);
            ok = ok && rule_on_mirror == swapped;
            ok = ok && (l != 1 || x < X / 2) && (l != 2 || x >= X / 2);
            left += l == 1;
            right += l == 2;
          }
      CHECK(ok);
      CHECK(left > 0);
      CHECK(right > 0);
    }
  }
}

TEST_CASE("small_lesions: lesions stay small and vessels are unlabeled distractors") {
  SyntheticTask t = make_task(TaskKind::small_lesions, {32, 32, 32}, 0);
  t.noise_std = 0.0;
  for (std::uint64_t i = 0; i < 5; ++i) {
    Sample s = generate_sample(t, i);
    std::size_t lesion = 0, bright = 0;
    for (std::size_t v = 0; v < s.image.data.size(); ++v) {
      lesion += s.label.labels[v] == 1;
      bright += s.image.data[v] > 0.5f;
      if (s.label.labels[v] == 1) CHECK(s.image.data[v] == 1.0f);
    }
    // At most 5 spheres of radius 2 (33 voxels each).
    CHECK(lesion >= 1);
    CHECK(lesion <= 5 * 33);
    CHECK(bright > lesion);
  }
}

TEST_CASE("impossible geometry raises a generation error") {
  SyntheticTask t = make_task(TaskKind::blobs, {24, 24, 24});
  t.count_min = t.count_max = 40;
  t.radius_min = t.radius_max = 6.0;
  CHECK_THROWS_AS(generate_sample(t, 0), GenerationError);

  SyntheticTask p = make_task(TaskKind::position_dependent, {16, 16, 16});
  p.radius_min = p.radius_max = 5.0;
  CHECK_THROWS_AS(generate_sample(p, 0), GenerationError);
}

TEST_CASE("task validation and strict JSON") {
  SyntheticTask t = make_task(TaskKind::small_lesions, {32, 32, 32}, 9);
  CHECK(task_from_json(to_json(t)) == t);
  nlohmann::json j = to_json(t);
  j["radius"] = 2;
  CHECK_THROWS_AS(task_from_json(j), ConfigError);
  CHECK_THROWS_AS(task_from_json({{"kind", "cubes"}}), ConfigError);
  CHECK_THROWS_AS(task_from_json({{"kind", "position_dependent"}, {"num_classes", 2}}), ConfigError);
  CHECK(task_from_json({{"kind", "blobs"}, {"dims", "16x24x32"}}).dims == Dims3{16, 24, 32});
}

TEST_CASE("crop copies the requested block") {
  SyntheticTask t = make_task(TaskKind::blobs, {24, 24, 24}, 3);
  Sample s = generate_sample(t, 0);
  Sample c = crop(s, {8, 0, 16}, {8, 16, 8});
  CHECK(c.image.dims == Dims3{8, 16, 8});
  CHECK(c.image.at(0, 3, 5, 7) == s.image.at(0, 11, 5, 23));
  CHECK(c.label.at(7, 15, 0) == s.label.at(15, 15, 16));
  CHECK_THROWS_AS(crop(s, {20, 0, 0}, {8, 8, 8}), ShapeError);
}

TEST_CASE("dice: hand-counted cases and conventions") {
  const Dims3 d{4, 4, 4};
  LabelVolume a(d), b(d);
  CHECK(dice(a, b, 2).mean == 1.0);  // both empty
  for (std::size_t i = 0; i < 8; ++i) a.labels[i] = 1;
  CHECK(dice(a, a, 2).mean == 1.0);
  for (std::size_t i = 4; i < 12; ++i) b.labels[i] = 1;
  CHECK(dice(a, b, 2).mean == doctest::Approx(0.5).epsilon(1e-15));
  LabelVolume c(d);
  for (std::size_t i = 32; i < 40; ++i) c.labels[i] = 1;
  CHECK(dice(a, c, 2).mean == 0.0);
  CHECK_THROWS_AS(dice(a, LabelVolume({4, 4, 5}), 2), ShapeError);

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    LabelVolume p(d), r(d);
    for (auto& v : p.labels) v = static_cast<std::uint16_t>(lab(rng));
    for (auto& v : r.labels) v = static_cast<std::uint16_t>(lab(rng));
    DiceScore pr = dice(p, r, 3), rp = dice(r, p, 3);
    CHECK(pr.mean == rp.mean);
    CHECK(pr.per_class.size() == 2);
    for (double x : pr.per_class) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("loss: saturation, uniform scores and reference value") {
  const std::size_t B = 2, C = 3;
  const Dims3 d{2, 3, 4};
  const std::size_t V = voxel_count(d);
  std::mt19937_64 rng(11);
  std::vector<std::uint16_t> y(B * V);
  for (auto& v : y) v = static_cast<std::uint16_t>(rng() % C);

  Tensor<double> perfect({B, C, d[0], d[1], d[2]});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < V; ++v) perfect[(b * C + y[b * V + v]) * V + v] = 20.0;
  {
    Tape<double> tape;
    CHECK(segmentation_loss(tape.variable(perfect), y).value().item() < 0.01);
  }
  {
    Tape<double> tape;
    std::vector<std::uint16_t> y2(B * V);
    for (std::size_t i = 0; i < y2.size(); ++i) y2[i] = i % 2;
    LossOptions ce_only{1.0, 0.0, 1e-5};
    Tensor<double> uniform({B, 2, d[0], d[1], d[2]}, 0.7);
    CHECK(segmentation_loss(tape.variable(uniform), y2, ce_only).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  Tensor<double> s = random_tensor({B, C, d[0], d[1], d[2]}, rng, 2.0);
  std::vector<double> w(B * V);
  for (auto& v : w) v = (rng() % 3) ? 1.0 : 0.0;
  Tape<double> tape;
  CHECK(segmentation_loss(tape.variable(s), y).value().item() == doctest::Approx(reference_loss(s, y, nullptr, 1e-5)).epsilon(1e-12));
  CHECK(segmentation_loss(tape.variable(s), y, {}, &w).value().item() == doctest::Approx(reference_loss(s, y, &w, 1e-5)).epsilon(1e-12));
  CHECK_THROWS_AS(segmentation_loss(tape.variable(s), std::vector<std::uint16_t>(3)), DimensionError);
}

TEST_CASE("loss gradient check") {
  const Dims3 d{2, 2, 3};
  const std::size_t V = voxel_count(d);
  std::mt19937_64 rng(5);
  for (std::size_t C : {2u, 3u}) {
    std::vector<std::uint16_t> y(2 * V);
    for (auto& v : y) v = static_cast<std::uint16_t>(rng() % C);
    std::vector<double> w(2 * V);
    for (auto& v : w) v = (rng() % 4) ? 1.0 : 0.0;
    Tensor<double> s = random_tensor({2, C, d[0], d[1], d[2]}, rng);
    auto plain = grad_check("segmentation_loss", OpFn([&](Tape<double>&, const std::vector<Var<double>>& in) {
                              return segmentation_loss(in[0], y);
                            }),
                            {s});
    CHECK_MESSAGE(plain.pass(), plain.worst());
    auto weighted = grad_check("segmentation_loss_weighted", OpFn([&](Tape<double>&, const std::vector<Var<double>>& in) {
                                 return segmentation_loss(in[0], y, LossOptions{0.5, 2.0, 1e-5}, &w);
                               }),
                               {s});
    CHECK_MESSAGE(weighted.pass(), weighted.worst());
  }
}

TEST_CASE("poly schedule endpoints") {
  for (std::size_t total : {2u, 10u, 2000u}) {
    CHECK(poly_lr(3e-4, 0, total) == 3e-4);
    CHECK(poly_lr(3e-4, total - 1, total) <= 1e-6 * 3e-4);
    for (std::size_t s = 1; s < total; ++s) CHECK(poly_lr(3e-4, s, total) <= poly_lr(3e-4, s - 1, total));
  }
  CHECK(poly_lr(1e-3, 5, 11, 1.0) == doctest::Approx(5e-4));
}

TEST_CASE("gradient clipping") {
  std::vector<Tensor<float>> g{Tensor<float>({2}, {3.0f, 4.0f}), Tensor<float>({1}, {12.0f})};
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(13.0));
  CHECK(global_norm(g) <= 1.0 + 1e-6);
  CHECK(g[0][0] / g[0][1] == doctest::Approx(0.75));
  std::vector<Tensor<float>> small{Tensor<float>({2}, {0.3f, 0.4f})};
  clip_grad_norm(small, 1.0);
  CHECK(small[0][0] == 0.3f);
}

TEST_CASE("AdamW first steps match the closed form") {
  Tensor<float> p({3}, {1.0f, -2.0f, 0.5f});
  const std::vector<float> g1{0.5f, -0.1f, 0.0f}, g2{-0.2f, 0.3f, 1.0f};
  AdamW opt(AdamWOptions{0.9, 0.98, 1e-8, 0.05});
  const double lr = 0.01;
  std::vector<double> ref{1.0, -2.0, 0.5}, m(3, 0), v(3, 0);
  for (int t = 1; t <= 2; ++t) {
    const std::vector<float>& g = t == 1 ? g1 : g2;
    opt.step({&p}, {Tensor<float>({3}, std::vector<float>(g))}, lr);
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.98 * v[i] + 0.02 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.98, t));
      ref[i] = ref[i] * (1 - lr * 0.05) - lr * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-6));
  }
  // First step moves each weight by about lr against its gradient sign.
  CHECK(opt.steps_taken() == 2);
}

TEST_CASE("recipe defaults and strict JSON") {
  TrainRecipe r;
  CHECK(r.lr == 3e-4);
  CHECK(r.weight_decay == 5e-2);
  CHECK(r.eps == 1e-8);
  CHECK(r.beta1 == 0.9);
  CHECK(r.beta2 == 0.98);
  CHECK(r.grad_clip_norm == 1.0);
  CHECK(r.total_steps() == 2000);
  CHECK(recipe_from_json(to_json(r)) == r);
  CHECK_THROWS_AS(recipe_from_json({{"learning_rate", 1e-3}}), ConfigError);
  CHECK_THROWS_AS(recipe_from_json({{"lr", -1.0}}), ConfigError);
  CHECK_THROWS_AS(recipe_from_json({{"mask_strategy", "checkerboard"}, {"mask_sparsity", 0.5}}), ConfigError);
}

TEST_CASE("run config: round trip, version and unknown keys") {
  RunConfig c;
  c.model = preset("primus-b");
  c.task = make_task(TaskKind::small_lesions, {32, 32, 32}, 4);
  c.recipe.lr = 1e-3;
  c.io.out_dir = "out";
  c.io.checkpoint_interval = 50;
  CHECK(run_config_from_json(to_json(c)) == c);

  nlohmann::json j = {{"version", 1}, {"model", {{"preset", "primus-s"}}}};
  RunConfig p = run_config_from_json(j);
  CHECK(p.model == preset("primus-s"));
  CHECK(to_json(p)["model"]["embed_dim"] == 396);

  CHECK_THROWS_AS(run_config_from_json({{"model", {}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"version", 2}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"version", 1}, {"extra", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"version", 1}, {"model", {{"layer", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"version", 1}, {"io", {{"outdir", "x"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"version", 1}, {"recipe", {{"lr", "fast"}}}}), ConfigError);
}

TEST_CASE("train: lr 0 leaves weights bitwise unchanged") {
  SyntheticTask task = make_task(TaskKind::blobs, {16, 16, 16}, 0);
  PrimusModel<float> model(nano_for(task), 3);
  const PrimusModel<float> before = model;
  TrainRecipe r = short_recipe(5);
  r.lr = 0.0;
  train(model, task, r);
  auto a = before.parameters();
  auto b = model.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].tensor == *b[i].tensor);
}

TEST_CASE("train: deterministic logs, clipping invariant and record layout") {
  SyntheticTask task = make_task(TaskKind::blobs, {16, 16, 16}, 1);
  TrainRecipe r = short_recipe(12);
  r.lr = 1e-2;
  r.eval_interval = 5;
  PrimusModel<float> m1(nano_for(task), 7), m2(nano_for(task), 7);
  std::vector<nlohmann::json> streamed;
  TrainResult a = train(m1, task, r, TrainHooks{[&](const nlohmann::json& j) { streamed.push_back(j); }, {}});
  TrainResult b = train(m2, task, r);
  CHECK(a.log == b.log);
  CHECK(a.log == streamed);
  CHECK(a.data_hash == b.data_hash);
  std::size_t evals = 0, steps = 0;
  for (const auto& rec : a.log) {
    if (rec.contains("eval_step")) {
      ++evals;
      CHECK(rec.at("per_class_dsc").size() == 1);
      CHECK(rec.at("mean_dsc").get<double>() >= 0.0);
    } else {
      CHECK(rec.at("step").get<std::size_t>() == steps);
      CHECK(rec.at("grad_norm").get<double>() <= 1.0 + 1e-6);
      CHECK(rec.contains("loss"));
      CHECK(rec.contains("lr"));
      ++steps;
    }
  }
  CHECK(steps == 12);
  CHECK(evals == 3);  // after steps 5 and 10, and the final one
  CHECK(a.log.front().at("lr").get<double>() == r.lr);
  auto params1 = m1.parameters();
  auto params2 = m2.parameters();
  for (std::size_t i = 0; i < params1.size(); ++i) CHECK(*params1[i].tensor == *params2[i].tensor);
}

TEST_CASE("train: smoothed loss decreases over the first 500 Nano steps on blobs") {
  SyntheticTask task = make_task(TaskKind::blobs, {24, 24, 24}, 0);
  PrimusModel<float> model(nano_for(task), 0);
  TrainRecipe r = short_recipe(500);
  TrainResult res = train(model, task, r);
  std::vector<double> means;
  double acc = 0;
  std::size_t n = 0;
  for (const auto& rec : res.log) {
    if (!rec.contains("loss")) continue;
    acc += rec.at("loss").get<double>();
    if (++n % 50 == 0) {
      means.push_back(acc / 50);
      acc = 0;
    }
  }
  REQUIRE(means.size() == 10);
  CHECK(means.back() < means.front());
}

TEST_CASE("train: non-finite loss aborts naming the step") {
  SyntheticTask task = make_task(TaskKind::blobs, {16, 16, 16}, 0);
  PrimusModel<float> model(nano_for(task), 0);
  model.decoder.head_b[0] = std::nanf("");
  try {
    train(model, task, short_recipe(3));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("train: precondition and class-count checks") {
  SyntheticTask task = make_task(TaskKind::blobs, {20, 20, 20}, 0);
  PrimusConfig cfg = preset("nano");
  cfg.input_patch = {16, 16, 16};
  PrimusModel<float> model(cfg, 0);
  CHECK_THROWS_AS(train(model, task, short_recipe(1)), ShapeError);
  SyntheticTask three = make_task(TaskKind::position_dependent, {16, 16, 16}, 0);
  CHECK_THROWS_AS(train(model, three, short_recipe(1)), ConfigError);
}

TEST_CASE("train: masked training runs with loss restricted to kept tokens") {
  SyntheticTask task = make_task(TaskKind::blobs, {16, 16, 16}, 0);
  PrimusConfig cfg = nano_for(task);
  cfg.patch_size = 4;
  for (const char* strategy : {"random", "structured"}) {
    PrimusModel<float> model(cfg, 0);
    TrainRecipe r = short_recipe(3);
    r.mask_strategy = strategy;
    r.mask_sparsity = 0.875;
    TrainResult res = train(model, task, r);
    CHECK(std::isfinite(res.log.front().at("loss").get<double>()));
  }
}

TEST_CASE("predict tiles volumes larger than the input patch") {
  SyntheticTask task = make_task(TaskKind::blobs, {32, 32, 32}, 0);
  PrimusConfig cfg = nano_for(task);
  cfg.input_patch = {16, 16, 16};
  PrimusModel<float> model(cfg, 2);
  Sample s = generate_sample(task, 0);
  LabelVolume full = predict(model, s.image);
  Sample tile = crop(s, {16, 0, 16}, {16, 16, 16});
  LabelVolume part = predict(model, tile.image);
  bool same = true;
  for (std::size_t z = 0; z < 16; ++z)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) same = same && part.at(z, y, x) == full.at(16 + z, y, 16 + x);
  CHECK(same);
  Volume odd(1, {24, 24, 24});
  CHECK_THROWS_AS(predict(model, odd), ShapeError);
}

TEST_CASE("ablation arms change only their named knob") {
  RunConfig base;
  base.task = make_task(TaskKind::small_lesions, {32, 32, 32}, 0);
  base.model = nano_for(base.task);
  auto diff_keys = [](const nlohmann::json& a, const nlohmann::json& b) {
    std::set<std::string> keys;
    for (const auto& [section, value] : a.items()) {
      if (!value.is_object()) continue;
      for (const auto& [k, v] : value.items()) {
        if (b[section][k] != v) keys.insert(section + "." + k);
      }
    }
    return keys;
  };
  const nlohmann::json b0 = to_json(arm_config(base, suite_arms(AblationSuite::token_size)[0], 0));
  const nlohmann::json b1 = to_json(arm_config(base, suite_arms(AblationSuite::token_size)[1], 0));
  const nlohmann::json b2 = to_json(arm_config(base, suite_arms(AblationSuite::token_size)[2], 0));
  CHECK(diff_keys(b0, b1) == std::set<std::string>{"model.input_patch"});
  CHECK(diff_keys(b1, b2) == std::set<std::string>{"model.patch_size", "model.decoder_schedule"});

  auto pe = suite_arms(AblationSuite::pe_ablation);
  REQUIRE(pe.size() == 4);
  CHECK(pe[0].name == "none");
  CHECK(pe[3].name == "lpe_rope");
  const nlohmann::json p0 = to_json(arm_config(base, pe[0], 1)), p3 = to_json(arm_config(base, pe[3], 1));
  CHECK(diff_keys(p0, p3) == std::set<std::string>{"model.use_lpe", "model.use_rope"});
  CHECK(p0["task"]["seed"] == 1);
  CHECK(p0["recipe"]["seed"] == 1);

  auto masking = suite_arms(AblationSuite::masking);
  const nlohmann::json m0 = to_json(arm_config(base, masking[0], 0)), m4 = to_json(arm_config(base, masking[4], 0));
  CHECK(diff_keys(m0, m4) == std::set<std::string>{"recipe.mask_strategy", "recipe.mask_sparsity"});
  CHECK(suite_arms(AblationSuite::identity_replacement)[1].all_identity);
  CHECK_THROWS_AS(parse_suite("dropout"), ConfigError);
}

TEST_CASE("ablation suites share data streams per seed and are thread-count independent") {
  RunConfig base;
  base.task = make_task(TaskKind::position_dependent, {16, 16, 16}, 0);
  base.model = nano_for(base.task);
  base.model.patch_size = 4;
  base.recipe = short_recipe(2);
  for (AblationSuite suite : {AblationSuite::pe_ablation, AblationSuite::identity_replacement, AblationSuite::masking}) {
    AblationTable t1 = run_ablation_suite(suite, base, 2, 1);
    AblationTable t2 = run_ablation_suite(suite, base, 2, 3);
    REQUIRE(t1.rows.size() == suite_arms(suite).size() * 2);
    CHECK(t1.to_csv() == t2.to_csv());
    for (const AblationRow& r : t1.rows) CHECK(r.data_hash == t1.rows[r.seed].data_hash);
    CHECK(t1.rows[0].data_hash != t1.rows[1].data_hash);
    for (const ArmSummary& s : t1.summary) CHECK(s.n == 2);
  }
  SyntheticTask lesions = make_task(TaskKind::small_lesions, {32, 32, 32}, 0);
  RunConfig tb = base;
  tb.task = lesions;
  tb.model = nano_for(lesions);
  AblationTable t = run_ablation_suite(AblationSuite::token_size, tb, 1, 1);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].data_hash == t.rows[1].data_hash);
  CHECK(t.rows[1].data_hash == t.rows[2].data_hash);
  CHECK(t.to_csv().rfind("suite,arm,seed,mean_dsc,data_hash\ntoken_size,k8_full,0,", 0) == 0);
}

TEST_CASE("ablation summary statistics") {
  RunConfig base;
  base.task = make_task(TaskKind::blobs, {16, 16, 16}, 0);
  base.model = nano_for(base.task);
  base.recipe = short_recipe(1);
  AblationTable t = run_ablation_suite(AblationSuite::identity_replacement, base, 3, 1);
  for (std::size_t a = 0; a < 2; ++a) {
    double m = 0, ss = 0;
    for (std::size_t s = 0; s < 3; ++s) m += t.rows[a * 3 + s].mean_dsc / 3;
    for (std::size_t s = 0; s < 3; ++s) ss += std::pow(t.rows[a * 3 + s].mean_dsc - m, 2);
    CHECK(t.summary[a].mean == doctest::Approx(m).epsilon(1e-12));
    CHECK(t.summary[a].sd == doctest::Approx(std::sqrt(ss / 2)).epsilon(1e-12));
  }
  CHECK(t.arm("all_identity").n == 3);
  CHECK(t.summary_json()["arms"].size() == 2);
  CHECK_THROWS_AS(t.arm("missing"), ConfigError);
}

TEST_CASE("gradient suite: every op and the whole model pass") {
  std::vector<GradCheckReport> ops = op_grad_suite();
  CHECK(ops.size() == 3 * 25);
  for (const GradCheckReport& r : ops) CHECK_MESSAGE(r.pass(), r.name << " worst " << r.worst());
  GradCheckReport model = model_grad_check();
  CHECK_MESSAGE(model.pass(), "worst " << model.worst());
}
