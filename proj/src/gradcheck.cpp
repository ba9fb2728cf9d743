#include "layergen/gradcheck.hpp"

#include <cmath>

#include "layergen/errors.hpp"

namespace layergen {

double finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double h) {
    if (h <= 0.0) throw ContractError("finite_diff_check: h must be > 0");

    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.param(t));
    Var root = fn(tape, vars);
    if (tape.value(root).size() != 1)
        throw ContractError("finite_diff_check: fn must be scalar-valued");
    tape.backward(root);
    std::vector<Tensor> grads;
    grads.reserve(inputs.size());
    for (Var v : vars) grads.push_back(tape.grad(v));

    auto eval_at = [&](std::size_t which, std::size_t coord, double value) {
        std::vector<Tensor> probe = inputs;
        probe[which][coord] = value;
        Tape t2;
        std::vector<Var> v2;
        v2.reserve(probe.size());
        for (const Tensor& t : probe) v2.push_back(t2.constant(t));
        return t2.value(fn(t2, v2))[0];
    };

    double max_err = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t c = 0; c < inputs[i].size(); ++c) {
            const double x = inputs[i][c];
            const double fd = (eval_at(i, c, x + h) - eval_at(i, c, x - h)) / (2.0 * h);
            const double ad = grads[i][c];
            const double denom = std::max(std::fabs(fd), std::fabs(ad));
            const double err = denom < 1e-8 ? std::fabs(fd - ad) : std::fabs(fd - ad) / denom;
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace layergen
