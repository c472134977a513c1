#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "primus/experiments/run_config.hpp"

namespace primus {

enum class AblationSuite { pe_ablation, token_size, identity_replacement, masking };
AblationSuite parse_suite(const std::string& name);
std::string to_string(AblationSuite suite);

struct AblationArm {
  std::string name;
  bool all_identity = false;              // train with every block replaced by identity
  std::function<void(RunConfig&)> apply;  // the arm's single knob
};

// pe_ablation:          none, lpe, rope, lpe_rope
// token_size:           k8_full, k8_half, k4_half (half = input patch of half the task dims)
// identity_replacement: intact, all_identity
// masking:              none, random_50, random_75, random_875, structured_875
std::vector<AblationArm> suite_arms(AblationSuite suite);

struct AblationRow {
  std::string suite;
  std::string arm;
  std::size_t seed = 0;
  double mean_dsc = 0;
  std::uint64_t data_hash = 0;
};

struct ArmSummary {
  std::string arm;
  double mean = 0;
  double sd = 0;  // sample standard deviation; 0 for a single seed
  std::size_t n = 0;
};

struct AblationTable {
  std::string suite;
  std::vector<AblationRow> rows;  // arm-major, seeds ascending
  std::vector<ArmSummary> summary;

  const ArmSummary& arm(const std::string& name) const;
  // Columns: suite, arm, seed, mean_dsc, data_hash.
  std::string to_csv() const;
  nlohmann::json summary_json() const;
};

// Resolves one arm: applies its knob and offsets the task, model and recipe seeds by `seed`.
RunConfig arm_config(const RunConfig& base, const AblationArm& arm, std::size_t seed);

// Trains every (arm, seed) pair from scratch and scores it on held-out samples.
// Runs up to `threads` pairs concurrently; the table does not depend on `threads`.
AblationTable run_ablation_suite(AblationSuite suite, const RunConfig& base, std::size_t seeds = 3,
                                 std::size_t threads = 1,
                                 const std::function<void(const AblationRow&)>& on_row = {});

// PRIMUS_THREADS, default 1.
std::size_t env_threads();

}  // namespace primus
