#include "primus/cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>

#include "primus/analysis/accounting.hpp"
#include "primus/analysis/activations.hpp"
#include "primus/experiments/ablation.hpp"
#include "primus/experiments/grad_suite.hpp"
#include "primus/experiments/run_config.hpp"
#include "primus/experiments/train.hpp"
#include "primus/model/checkpoint.hpp"
#include "primus/numerics/errors.hpp"

namespace primus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

// A run config (has "version") or a bare task document.
SyntheticTask load_task(const std::string& path) {
  json j = load_json_file(path);
  if (j.is_object() && j.contains("version")) return run_config_from_json(j).task;
  return task_from_json(j);
}

void prepare_out_dir(const fs::path& dir) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir)) throw ConfigError("output directory " + dir.string() + " is not empty");
  } else {
    fs::create_directories(dir);
  }
}

json dice_json(const DiceScore& s) { return {{"per_class_dsc", s.per_class}, {"mean_dsc", s.mean}}; }

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string model;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig c = load_run_config(a.config);
  if (!a.model.empty()) {
    PrimusConfig m = preset(a.model);
    m.num_classes = c.task.num_classes;
    m.input_patch = c.task.dims;
    m.validate();
    c.model = m;
  }
  if (a.seed) c.recipe.seed = *a.seed;
  if (!a.out.empty()) c.io.out_dir = a.out;
  if (c.io.out_dir.empty()) throw ConfigError("no output directory: pass --out or set io.out_dir");

  const fs::path dir(c.io.out_dir);
  prepare_out_dir(dir);
  write_text(dir / "config.json", to_json(c).dump(2) + "\n");

  PrimusModel<float> model(c.model, c.recipe.seed);
  std::ofstream metrics(dir / "metrics.ndjson", std::ios::binary);
  if (!metrics) throw Error("cannot write " + (dir / "metrics.ndjson").string());

  TrainHooks hooks;
  hooks.on_record = [&](const json& rec) { metrics << rec.dump() << '\n' << std::flush; };
  const std::size_t interval = c.io.checkpoint_interval;
  hooks.on_step = [&](std::size_t step, const PrimusModel<float>& m) {
    if (interval > 0 && (step + 1) % interval == 0) {
      save_checkpoint((dir / ("checkpoint_step" + std::to_string(step + 1) + ".pck")).string(), m);
    }
  };
  TrainResult r = train(model, c.task, c.recipe, hooks);
  save_checkpoint((dir / "checkpoint.pck").string(), model);

  json summary = dice_json(r.final_eval);
  summary["out_dir"] = dir.string();
  summary["steps"] = c.recipe.total_steps();
  summary["data_hash"] = hex16(r.data_hash);
  out << summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& task_path, std::size_t n, std::ostream& out) {
  PrimusModel<float> model = load_checkpoint(ckpt);
  SyntheticTask task = load_task(task_path);
  if (model.config().num_classes != task.num_classes) {
    throw ConfigError("checkpoint predicts " + std::to_string(model.config().num_classes) + " classes, task has " +
                      std::to_string(task.num_classes));
  }
  json r = dice_json(evaluate(model, task, n));
  r["n"] = n;
  r["split"] = "heldout";
  out << r.dump(2) << '\n';
  return kExitOk;
}

struct ReportArgs {
  std::string config, ckpt, model, input_patch, format = "json";
  double unet_ref = kDefaultUnetReference;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  PrimusConfig cfg;
  std::string name;
  std::size_t identity = 0;
  if (!a.config.empty()) {
    cfg = load_run_config(a.config).model;
    name = a.config;
  } else if (!a.ckpt.empty()) {
    PrimusModel<float> m = load_checkpoint(a.ckpt);
    cfg = m.config();
    for (bool b : m.identity_blocks()) identity += b ? 1 : 0;
    name = a.ckpt;
  } else {
    cfg = preset(a.model);
    name = a.model;
  }
  const Dims3 patch = a.input_patch.empty() ? cfg.input_patch : parse_dims(a.input_patch);
  ArchitectureReport r = make_report(cfg, patch, a.unet_ref, name, identity);
  out << (a.format == "text" ? report_to_text(r) : report_to_json(r).dump(2) + "\n");
  return kExitOk;
}

int cmd_ablate(const std::string& suite_name, const std::string& config, std::size_t seeds, const std::string& csv_path,
               bool progress, std::ostream& out, std::ostream& err) {
  const AblationSuite suite = parse_suite(suite_name);
  RunConfig base = load_run_config(config);
  std::function<void(const AblationRow&)> on_row;
  if (progress) {
    on_row = [&](const AblationRow& r) {
      err << json{{"arm", r.arm}, {"seed", r.seed}, {"mean_dsc", r.mean_dsc}}.dump() << '\n' << std::flush;
    };
  }
  AblationTable t = run_ablation_suite(suite, base, seeds, env_threads(), on_row);
  if (csv_path.empty()) {
    out << t.to_csv();
  } else {
    write_text(csv_path, t.to_csv());
    out << t.summary_json().dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_cka(const std::string& a_path, const std::string& b_path, std::ostream& out) {
  ActivationRecord a = load_activations(a_path);
  ActivationRecord b = load_activations(b_path);
  json layers = json::array();
  for (const LayerCka& l : cka_per_layer(a, b)) layers.push_back({{"tag", l.tag}, {"cka", l.cka}});
  out << json{{"layers", layers}}.dump(2) << '\n';
  return kExitOk;
}

int cmd_capture(const std::string& ckpt, const std::string& task_path, std::size_t batch_size, std::size_t batches,
                const std::string& out_path, std::ostream& out) {
  PrimusModel<float> model = load_checkpoint(ckpt);
  SyntheticTask task = load_task(task_path);
  const Dims3 patch = model.config().input_patch;
  for (int i = 0; i < 3; ++i) {
    if (task.dims[i] < patch[i]) {
      throw ShapeError("task volume " + to_string(task.dims) + " is smaller than the model input patch " + to_string(patch));
    }
  }
  std::vector<Volume> probes;
  for (std::size_t i = 0; i < batch_size * batches; ++i) {
    Sample s = generate_sample(task, i, Split::heldout);
    probes.push_back(task.dims == patch ? std::move(s.image) : crop(s, {0, 0, 0}, patch).image);
  }
  const std::string probe_id = to_string(task.kind) + "/" + to_string(task.dims) + "/heldout";
  ActivationRecord rec = capture_activations(model, probes, batch_size, probe_id, task.seed);
  save_activations(out_path, rec);
  out << json{{"out", out_path}, {"tags", rec.tags}, {"batches", rec.batch_count}, {"n", rec.n}}.dump(2) << '\n';
  return kExitOk;
}

json report_line(const GradCheckReport& r) {
  return {{"name", r.name}, {"worst_rel_error", r.worst()}, {"tolerance", r.tolerance}, {"pass", r.pass()}};
}

int cmd_gradcheck(const std::string& level, std::ostream& out) {
  std::vector<GradCheckReport> reports = level == "model" ? std::vector<GradCheckReport>{model_grad_check()} : op_grad_suite();
  std::size_t failed = 0;
  for (const GradCheckReport& r : reports) {
    failed += r.pass() ? 0 : 1;
    out << report_line(r).dump() << '\n';
  }
  out << json{{"level", level}, {"checked", reports.size()}, {"failed", failed}}.dump() << '\n';
  return failed == 0 ? kExitOk : kExitFailure;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const ShapeError*>(&e)) return "ShapeError";
  if (dynamic_cast<const DimensionError*>(&e)) return "DimensionError";
  if (dynamic_cast<const DegenerateInputError*>(&e)) return "DegenerateInputError";
  if (dynamic_cast<const DomainError*>(&e)) return "DomainError";
  if (dynamic_cast<const GenerationError*>(&e)) return "GenerationError";
  if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "InternalError";
}

void print_error(std::ostream& err, const std::string& type, const std::string& msg) {
  err << json{{"error", msg}, {"type", type}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pure-Transformer 3D segmentation toolkit", "primus"};
  app.require_subcommand(1);
  std::function<int()> action;

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train on a synthetic task and write checkpoints, metrics and a config snapshot");
  train_cmd->add_option("--config", ta.config, "Run config JSON")->required();
  train_cmd->add_option("--out", ta.out, "Output directory (overrides io.out_dir); must be empty or absent");
  train_cmd->add_option("--seed", ta.seed, "Overrides recipe.seed (model init, batch order, dropout)");
  train_cmd->add_option("--model", ta.model, "Replace the model section with a named preset")
      ->check(CLI::IsMember(preset_names()));
  train_cmd->callback([&] { action = [&] { return cmd_train(ta, out); }; });

  std::string ckpt, task_path;
  std::size_t n = 32;
  auto* eval_cmd = app.add_subcommand("eval", "Mean DSC of a checkpoint on held-out samples");
  eval_cmd->add_option("--ckpt", ckpt, "PCK1 checkpoint")->required();
  eval_cmd->add_option("--task-config", task_path, "Task JSON or run config")->required();
  eval_cmd->add_option("--n", n, "Number of held-out samples")->check(CLI::PositiveNumber);
  eval_cmd->callback([&] { action = [&] { return cmd_eval(ckpt, task_path, n, out); }; });

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "Parameter, FLOP and UNet-index accounting");
  auto* r_config = report_cmd->add_option("--config", ra.config, "Run config JSON");
  auto* r_ckpt = report_cmd->add_option("--ckpt", ra.ckpt, "PCK1 checkpoint");
  auto* r_model = report_cmd->add_option("--model", ra.model, "Named preset")->check(CLI::IsMember(preset_names()));
  r_config->excludes(r_ckpt, r_model);
  r_ckpt->excludes(r_model);
  report_cmd->add_option("--input-patch", ra.input_patch, "ZxYxX, defaults to the model's input patch");
  report_cmd->add_option("--unet-ref", ra.unet_ref, "Reference U-Net parameter count");
  report_cmd->add_option("--format", ra.format)->check(CLI::IsMember({"json", "text"}));
  report_cmd->callback([&] {
    if (ra.config.empty() && ra.ckpt.empty() && ra.model.empty()) {
      throw CLI::RequiredError("one of --config, --ckpt or --model");
    }
    action = [&] { return cmd_report(ra, out); };
  });

  std::string suite, ablate_config, csv_path;
  std::size_t seeds = 3;
  bool progress = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation suite (threads from PRIMUS_THREADS)");
  ablate_cmd->add_option("--suite", suite, "pe_ablation, token_size, identity_replacement or masking")->required();
  ablate_cmd->add_option("--config", ablate_config, "Base run config")->required();
  ablate_cmd->add_option("--seeds", seeds, "Seeds per arm")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--out", csv_path, "Write the CSV here and print a summary instead");
  ablate_cmd->add_flag("--progress", progress, "Print one JSON line per finished run to stderr");
  ablate_cmd->callback([&] { action = [&] { return cmd_ablate(suite, ablate_config, seeds, csv_path, progress, out, err); }; });

  std::string acts_a, acts_b;
  auto* cka_cmd = app.add_subcommand("cka", "Per-layer minibatch CKA between two activation records");
  cka_cmd->add_option("--acts-a", acts_a)->required();
  cka_cmd->add_option("--acts-b", acts_b)->required();
  cka_cmd->callback([&] { action = [&] { return cmd_cka(acts_a, acts_b, out); }; });

  std::string cap_ckpt, cap_task, cap_out;
  std::size_t batch_size = 64, batches = 1;
  auto* cap_cmd = app.add_subcommand("capture", "Record per-layer activations on held-out probes (PACT)");
  cap_cmd->add_option("--ckpt", cap_ckpt)->required();
  cap_cmd->add_option("--task-config", cap_task)->required();
  cap_cmd->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  cap_cmd->add_option("--batches", batches)->check(CLI::PositiveNumber);
  cap_cmd->add_option("--out", cap_out)->required();
  cap_cmd->callback([&] { action = [&] { return cmd_capture(cap_ckpt, cap_task, batch_size, batches, cap_out, out); }; });

  std::string level = "ops";
  auto* gc_cmd = app.add_subcommand("gradcheck", "Central-difference gradient checks");
  gc_cmd->add_option("--level", level)->check(CLI::IsMember({"ops", "model"}));
  gc_cmd->callback([&] { action = [&] { return cmd_gradcheck(level, out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    print_error(err, "UsageError", e.what());
    return kExitConfig;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    print_error(err, "ConfigError", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    print_error(err, "NumericalError", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    print_error(err, error_type(e), e.what());
    return kExitFailure;
  }
}

}  // namespace primus
