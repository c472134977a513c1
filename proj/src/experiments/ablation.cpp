#include "primus/experiments/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "primus/numerics/errors.hpp"

namespace primus {

AblationSuite parse_suite(const std::string& name) {
  if (name == "pe_ablation") return AblationSuite::pe_ablation;
  if (name == "token_size") return AblationSuite::token_size;
  if (name == "identity_replacement") return AblationSuite::identity_replacement;
  if (name == "masking") return AblationSuite::masking;
  throw ConfigError("unknown suite '" + name + "' (expected pe_ablation, token_size, identity_replacement or masking)");
}

std::string to_string(AblationSuite suite) {
  switch (suite) {
    case AblationSuite::pe_ablation:
      return "pe_ablation";
    case AblationSuite::token_size:
      return "token_size";
    case AblationSuite::identity_replacement:
      return "identity_replacement";
    case AblationSuite::masking:
      return "masking";
  }
  return "?";
}

namespace {

std::function<void(RunConfig&)> pe(bool lpe, bool rope) {
  return [lpe, rope](RunConfig& c) {
    c.model.use_lpe = lpe;
    c.model.use_rope = rope;
  };
}

std::function<void(RunConfig&)> tokens(std::size_t k, bool half) {
  return [k, half](RunConfig& c) {
    c.model.patch_size = k;
    for (int a = 0; a < 3; ++a) {
      if (half && c.task.dims[a] % 2 != 0) throw ConfigError("token_size half-patch arms need even task dims");
      c.model.input_patch[a] = half ? c.task.dims[a] / 2 : c.task.dims[a];
    }
  };
}

std::function<void(RunConfig&)> mask(const std::string& strategy, double sparsity) {
  return [strategy, sparsity](RunConfig& c) {
    c.recipe.mask_strategy = strategy;
    c.recipe.mask_sparsity = sparsity;
  };
}

}  // namespace

std::vector<AblationArm> suite_arms(AblationSuite suite) {
  switch (suite) {
    case AblationSuite::pe_ablation:
      return {{"none", false, pe(false, false)},
              {"lpe", false, pe(true, false)},
              {"rope", false, pe(false, true)},
              {"lpe_rope", false, pe(true, true)}};
    case AblationSuite::token_size:
      return {{"k8_full", false, tokens(8, false)}, {"k8_half", false, tokens(8, true)}, {"k4_half", false, tokens(4, true)}};
    case AblationSuite::identity_replacement:
      return {{"intact", false, [](RunConfig&) {}}, {"all_identity", true, [](RunConfig&) {}}};
    case AblationSuite::masking:
      return {{"none", false, mask("none", 0.0)},
              {"random_50", false, mask("random", 0.5)},
              {"random_75", false, mask("random", 0.75)},
              {"random_875", false, mask("random", 0.875)},
              {"structured_875", false, mask("structured", 0.875)}};
  }
  return {};
}

RunConfig arm_config(const RunConfig& base, const AblationArm& arm, std::size_t seed) {
  RunConfig c = base;
  arm.apply(c);
  c.task.seed = base.task.seed + seed;
  c.recipe.seed = base.recipe.seed + seed;
  c.model.validate();
  c.recipe.validate();
  return c;
}

const ArmSummary& AblationTable::arm(const std::string& name) const {
  for (const ArmSummary& s : summary) {
    if (s.arm == name) return s;
  }
  throw ConfigError("no arm '" + name + "' in suite " + suite);
}

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << "suite,arm,seed,mean_dsc,data_hash\n";
  for (const AblationRow& r : rows) {
    out << r.suite << ',' << r.arm << ',' << r.seed << ',' << std::setprecision(17) << r.mean_dsc << ',' << std::hex
        << std::setw(16) << std::setfill('0') << r.data_hash << std::dec << std::setfill(' ') << '\n';
  }
  return out.str();
}

nlohmann::json AblationTable::summary_json() const {
  nlohmann::json arms = nlohmann::json::array();
  for (const ArmSummary& s : summary) arms.push_back({{"arm", s.arm}, {"mean_dsc", s.mean}, {"sd_dsc", s.sd}, {"seeds", s.n}});
  return {{"suite", suite}, {"arms", arms}};
}

std::size_t env_threads() {
  const char* v = std::getenv("PRIMUS_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("PRIMUS_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

AblationTable run_ablation_suite(AblationSuite suite, const RunConfig& base, std::size_t seeds, std::size_t threads,
                                 const std::function<void(const AblationRow&)>& on_row) {
  if (seeds == 0) throw ConfigError("ablation needs at least one seed");
  const std::vector<AblationArm> arms = suite_arms(suite);
  AblationTable table;
  table.suite = to_string(suite);

  // Resolve every configuration up front so config errors surface before training.
  std::vector<RunConfig> configs;
  for (const AblationArm& arm : arms) {
    for (std::size_t s = 0; s < seeds; ++s) configs.push_back(arm_config(base, arm, s));
  }
  table.rows.resize(configs.size());

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t job = next++; job < configs.size(); job = next++) {
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        const RunConfig& c = configs[job];
        const AblationArm& arm = arms[job / seeds];
        PrimusModel<float> model(c.model, c.recipe.seed);
        if (arm.all_identity) model.set_all_identity();
        TrainResult r = train(model, c.task, c.recipe);
        AblationRow row{table.suite, arm.name, job % seeds, r.final_eval.mean, r.data_hash};
        std::lock_guard<std::mutex> lock(mu);
        table.rows[job] = row;
        if (on_row) on_row(row);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, configs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t a = 0; a < arms.size(); ++a) {
    ArmSummary s{arms[a].name, 0.0, 0.0, seeds};
    for (std::size_t k = 0; k < seeds; ++k) s.mean += table.rows[a * seeds + k].mean_dsc;
    s.mean /= static_cast<double>(seeds);
    if (seeds > 1) {
      double ss = 0;
      for (std::size_t k = 0; k < seeds; ++k) ss += std::pow(table.rows[a * seeds + k].mean_dsc - s.mean, 2);
      s.sd = std::sqrt(ss / static_cast<double>(seeds - 1));
    }
    table.summary.push_back(s);
  }
  return table;
}

}  // namespace primus
