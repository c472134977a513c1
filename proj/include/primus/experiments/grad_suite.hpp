#pragma once

#include <cstdint>
#include <vector>

#include "primus/numerics/grad_check.hpp"

namespace primus {

// Central-difference checks of every differentiable op (numerics, RoPE, LPE,
// token gather/scatter, the training loss) on three random shapes each, 64-bit,
// tolerance 1e-4.
std::vector<GradCheckReport> op_grad_suite(std::uint64_t seed = 12);

// Whole Nano model (LPE and one register token enabled) against central
// differences on a random subset of entries per tensor, 64-bit, tolerance 1e-3.
GradCheckReport model_grad_check(std::uint64_t seed = 12);

}  // namespace primus
