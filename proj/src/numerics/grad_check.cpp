#include "primus/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace primus {

double GradCheckReport::worst() const {
  double w = 0;
  for (double e : max_rel_error) w = std::max(w, e);
  return w;
}

namespace {

double evaluate(const ScalarFn& f) {
  Tape<double> tape(false);
  tape.set_check_finite(true);
  Var<double> out = f(tape);
  return out.value().item();
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const ScalarFn& f, const std::vector<Tensor<double>*>& inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report{name, {}, options.tolerance};
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape(true);
    tape.set_check_finite(true);
    Var<double> out = f(tape);
    if (out.value().size() != 1) throw DimensionError("grad_check '" + name + "': function must return a scalar");
    tape.backward(out);
    for (const Tensor<double>* in : inputs) analytic.push_back(tape.grad_of(*in));
  }
  std::mt19937_64 rng(options.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& x = *inputs[k];
    std::vector<std::size_t> entries(x.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_input && entries.size() > options.max_entries_per_input) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_input);
    }
    double worst = 0;
    for (std::size_t i : entries) {
      const double saved = x[i];
      x[i] = saved + options.step;
      const double up = evaluate(f);
      x[i] = saved - options.step;
      const double down = evaluate(f);
      x[i] = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
  }
  return report;
}

GradCheckReport grad_check(const std::string& name, const OpFn& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor<double>*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  ScalarFn bound = [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (auto* p : ptrs) vars.push_back(tape.param(*p));
    return f(tape, vars);
  };
  return grad_check(name, bound, ptrs, options);
}

}  // namespace primus
