#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "primus/numerics/tape.hpp"
#include "primus/numerics/tensor.hpp"

namespace primus {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;  // central-difference perturbation
  // 0 checks every entry; otherwise a seeded random subset of this many entries per input.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  std::vector<double> max_rel_error;  // one per checked input
  double tolerance = 0;

  double worst() const;
  bool pass() const { return worst() <= tolerance; }
};

// Compares reverse-mode gradients against central differences for a scalar
// function of `inputs`. `f` must bind each input through Tape::param so that
// the perturbed tensors are picked up. Element error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
using ScalarFn = std::function<Var<double>(Tape<double>&)>;

GradCheckReport grad_check(const std::string& name, const ScalarFn& f, const std::vector<Tensor<double>*>& inputs,
                           const GradCheckOptions& options = {});

// Convenience form for free-standing ops: `f` receives one Var per input tensor.
using OpFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

GradCheckReport grad_check(const std::string& name, const OpFn& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace primus
