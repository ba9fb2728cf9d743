#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "layergen/tape.hpp"
#include "layergen/tensor.hpp"

namespace layergen {

// Builds a scalar-valued computation over the given leaves. Receives the tape
// and one Var per input tensor, in order; must return a scalar node.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central-difference verification of backward(): perturbs every input
// coordinate by +-h and compares (f+ - f-)/2h against the reverse-mode
// gradient. Returns the max relative error over all coordinates, falling
// back to absolute error when both magnitudes sit below 1e-8.
double finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double h);

struct GradCheckCase {
    std::string name;
    double max_err;
};

// Named finite-difference checks covering every differentiable primitive plus
// the composite paths (attention block, the distillation layer loss, and the
// full student with the total training objective). Each case runs `rounds`
// seeded random draws and reports the worst error.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, int rounds, double h = 1e-5);

}  // namespace layergen
