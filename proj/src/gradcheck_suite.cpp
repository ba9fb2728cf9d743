#include <cmath>
#include <utility>

#include "layergen/distill.hpp"
#include "layergen/gradcheck.hpp"
#include "layergen/models.hpp"
#include "layergen/prng.hpp"

namespace layergen {

namespace {

Tensor rnd(std::vector<std::size_t> shape, Prng& g, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = g.uniform(lo, hi);
    return t;
}

// Magnitudes bounded away from zero, random sign.
Tensor rnd_away(std::vector<std::size_t> shape, Prng& g, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = g.uniform(lo, hi) * (g.uniform() < 0.5 ? -1.0 : 1.0);
    return t;
}

// Reduce a tensor-valued node to a scalar with fixed random weights.
Var contract(Tape& t, Var out, const Tensor& r) { return sum(mul(out, t.constant(r))); }

std::size_t dim(Prng& g) { return 2 + g.index(4); }  // 2..5

struct Case {
    std::string name;
    std::function<double(Prng&, double)> run;  // one seeded round -> max err
};

double check_unary(Prng& g, double h, const std::function<Var(Var)>& op, Tensor x) {
    Tape probe;
    Tensor r = rnd(probe.value(op(probe.constant(x))).shape(), g);
    return finite_diff_check(
        [&](Tape& t, const std::vector<Var>& v) { return contract(t, op(v[0]), r); }, {x}, h);
}

std::vector<Case> make_cases() {
    std::vector<Case> cases;
    auto add_case = [&](std::string name, std::function<double(Prng&, double)> fn) {
        cases.push_back({std::move(name), std::move(fn)});
    };

    add_case("add", [](Prng& g, double h) {
        std::vector<std::size_t> s{dim(g), dim(g)};
        Tensor r = rnd(s, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) { return contract(t, v[0] + v[1], r); },
            {rnd(s, g), rnd(s, g)}, h);
    });
    add_case("sub", [](Prng& g, double h) {
        std::vector<std::size_t> s{dim(g), dim(g)};
        Tensor r = rnd(s, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) { return contract(t, v[0] - v[1], r); },
            {rnd(s, g), rnd(s, g)}, h);
    });
    add_case("mul", [](Prng& g, double h) {
        std::vector<std::size_t> s{dim(g), dim(g)};
        Tensor r = rnd(s, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) { return contract(t, v[0] * v[1], r); },
            {rnd(s, g), rnd(s, g)}, h);
    });
    add_case("div", [](Prng& g, double h) {
        std::vector<std::size_t> s{dim(g), dim(g)};
        Tensor r = rnd(s, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) { return contract(t, div(v[0], v[1]), r); },
            {rnd(s, g), rnd_away(s, g, 0.5, 1.5)}, h);
    });
    add_case("neg", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return neg(x); }, rnd({dim(g), dim(g)}, g));
    });
    add_case("scale", [](Prng& g, double h) {
        const double s = g.uniform(-2.0, 2.0);
        return check_unary(g, h, [s](Var x) { return scale(x, s); }, rnd({dim(g), dim(g)}, g));
    });
    add_case("reshape", [](Prng& g, double h) {
        const std::size_t a = dim(g), b = dim(g);
        return check_unary(g, h, [=](Var x) { return reshape(x, {a * b}); }, rnd({a, b}, g));
    });
    add_case("matmul", [](Prng& g, double h) {
        const std::size_t m = dim(g), k = dim(g), n = dim(g);
        Tensor r = rnd({m, n}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) { return contract(t, matmul(v[0], v[1]), r); },
            {rnd({m, k}, g), rnd({k, n}, g)}, h);
    });
    add_case("transpose", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return transpose(x); }, rnd({dim(g), dim(g)}, g));
    });
    add_case("gelu", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return gelu(x); }, rnd({dim(g), dim(g)}, g, -2, 2));
    });
    add_case("abs", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return abs(x); },
                           rnd_away({dim(g), dim(g)}, g, 0.2, 1.5));
    });
    add_case("sqrt", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return sqrt(x); },
                           rnd({dim(g), dim(g)}, g, 0.3, 2.0));
    });
    add_case("log_sigmoid", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return log_sigmoid(x); },
                           rnd({dim(g), dim(g)}, g, -3, 3));
    });
    add_case("clamp_interior", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return clamp(x, -3.0, 3.0); },
                           rnd({dim(g), dim(g)}, g));
    });
    add_case("clamp_saturated", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return clamp(x, -3.0, 3.0); },
                           rnd_away({dim(g), dim(g)}, g, 3.5, 4.5));
    });
    add_case("sum", [](Prng& g, double h) {
        return finite_diff_check([](Tape&, const std::vector<Var>& v) { return sum(v[0]); },
                                 {rnd({dim(g), dim(g)}, g)}, h);
    });
    add_case("mean", [](Prng& g, double h) {
        return finite_diff_check([](Tape&, const std::vector<Var>& v) { return mean(v[0]); },
                                 {rnd({dim(g), dim(g)}, g)}, h);
    });
    add_case("sum_axis0", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return sum_axis(x, 0); }, rnd({dim(g), dim(g)}, g));
    });
    add_case("sum_axis1", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return sum_axis(x, 1); }, rnd({dim(g), dim(g)}, g));
    });
    add_case("softmax_rows", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return softmax(x, 1); },
                           rnd({dim(g), dim(g)}, g, -2, 2));
    });
    add_case("softmax_cols", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return softmax(x, 0); },
                           rnd({dim(g), dim(g)}, g, -2, 2));
    });
    add_case("softmax_vec", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return softmax(x, 0); }, rnd({dim(g) + 1}, g, -2, 2));
    });
    add_case("row_norm", [](Prng& g, double h) {
        return check_unary(g, h, [](Var x) { return row_norm(x, 1e-5); },
                           rnd({dim(g), dim(g) + 1}, g));
    });
    add_case("layer_norm", [](Prng& g, double h) {
        const std::size_t T = dim(g), D = dim(g) + 1;
        Tensor r = rnd({T, D}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, layer_norm(v[0], v[1], v[2], 1e-5), r);
            },
            {rnd({T, D}, g), rnd({D}, g, 0.5, 1.5), rnd({D}, g, -0.5, 0.5)}, h);
    });
    add_case("conv1d", [](Prng& g, double h) {
        const std::size_t ci = 2, co = 3, K = 3, T = 8;
        Tensor r = rnd({co, T - K + 1}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, conv1d(v[0], v[1], std::nullopt, 1, 1), r);
            },
            {rnd({ci, T}, g), rnd({co, ci, K}, g)}, h);
    });
    add_case("conv1d_strided", [](Prng& g, double h) {
        const std::size_t ci = 2, co = 2, K = 4, T = 11, stride = 3;
        Tensor r = rnd({co, (T - K) / stride + 1}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, conv1d(v[0], v[1], std::nullopt, stride, 1), r);
            },
            {rnd({ci, T}, g), rnd({co, ci, K}, g)}, h);
    });
    add_case("conv1d_grouped_bias", [](Prng& g, double h) {
        const std::size_t ci = 4, co = 6, K = 2, T = 7, groups = 2;
        Tensor r = rnd({co, T - K + 1}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, conv1d(v[0], v[1], v[2], 1, groups), r);
            },
            {rnd({ci, T}, g), rnd({co, ci / groups, K}, g), rnd({co}, g)}, h);
    });
    add_case("pad_crop", [](Prng& g, double h) {
        const std::size_t C = dim(g), T = dim(g) + 2;
        return check_unary(
            g, h, [=](Var x) { return crop_time(pad_time(x, 2, 3), 1, T + 2); }, rnd({C, T}, g));
    });
    add_case("slice_concat", [](Prng& g, double h) {
        const std::size_t T = dim(g), D = 4;
        Tensor r = rnd({T, 4}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                std::vector<Var> parts{slice_cols(v[0], 0, 2), slice_cols(v[1], 1, 3)};
                return contract(t, concat_cols(parts), r);
            },
            {rnd({T, D}, g), rnd({T, D}, g)}, h);
    });
    add_case("add_rowvec", [](Prng& g, double h) {
        const std::size_t T = dim(g), D = dim(g);
        Tensor r = rnd({T, D}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, add_rowvec(v[0], v[1]), r);
            },
            {rnd({T, D}, g), rnd({D}, g)}, h);
    });
    add_case("mul_rowvec", [](Prng& g, double h) {
        const std::size_t T = dim(g), D = dim(g);
        Tensor r = rnd({T, D}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, mul_rowvec(v[0], v[1]), r);
            },
            {rnd({T, D}, g), rnd({D}, g)}, h);
    });
    add_case("add_colvec", [](Prng& g, double h) {
        const std::size_t C = dim(g), T = dim(g);
        Tensor r = rnd({C, T}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, add_colvec(v[0], v[1]), r);
            },
            {rnd({C, T}, g), rnd({C}, g)}, h);
    });
    add_case("mul_colvec", [](Prng& g, double h) {
        const std::size_t C = dim(g), T = dim(g);
        Tensor r = rnd({C, T}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                return contract(t, mul_colvec(v[0], v[1]), r);
            },
            {rnd({C, T}, g), rnd({C}, g)}, h);
    });
    add_case("cross_entropy", [](Prng& g, double h) {
        const std::size_t K = dim(g) + 1;
        const std::size_t label = g.index(K);
        return finite_diff_check(
            [&](Tape&, const std::vector<Var>& v) { return cross_entropy(v[0], label); },
            {rnd({K}, g, -2, 2)}, h);
    });
    add_case("attention_block", [](Prng& g, double h) {
        const std::size_t D = 8, T = 5;
        Block blk = Block::init(D, 2, 16, false, Prng(g.next_u64()), "b");
        ParamList pl;
        blk.params("b", pl);
        std::vector<Tensor> inputs;
        for (const auto& p : pl) inputs.push_back(*p.tensor);
        inputs.push_back(rnd({T, D}, g));
        Tensor r = rnd({T, D}, g);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                std::vector<Var> weights(v.begin(), v.end() - 1);
                BindCtx ctx{&t, false, {}};
                ctx.supplied = &weights;
                Block::B bb = blk.bind(ctx);
                return contract(t, bb.forward(v.back()), r);
            },
            inputs, h);
    });
    add_case("layer_loss", [](Prng& g, double h) {
        const std::size_t T = 4, D = 3;
        return finite_diff_check(
            [](Tape&, const std::vector<Var>& v) {
                return layer_loss_node(v[0], v[1], 1.0, LossReduction::SumT).total;
            },
            {rnd({T, D}, g), rnd({T, D}, g)}, h);
    });
    add_case("student_composite", [](Prng& g, double h) {
        StudentConfig cfg;
        cfg.variant = StudentVariant::proposed();
        ConvFrontEndConfig fe;
        fe.layers = {{8, 3, 2}};
        fe.projection_dim = 8;
        fe.pos_conv_kernel = 4;
        fe.pos_conv_groups = 2;
        cfg.front_end = fe;
        cfg.block = BlockConfig{8, 2, 16};
        cfg.seed = g.next_u64();
        StudentModel student = StudentModel::build(cfg);

        const std::size_t samples = 24;
        const std::size_t T = frame_count(fe, samples);
        Tensor wave = rnd({samples}, g);
        const std::size_t n_targets = 2;
        std::vector<Tensor> targets;
        for (std::size_t i = 0; i < n_targets; ++i) targets.push_back(rnd({T, 8}, g));

        std::vector<Tensor> inputs;
        for (const auto& p : student.parameters()) inputs.push_back(*p.tensor);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& v) {
                StudentModel::Bound b = student.bind_with(t, v);
                Var f = b.extract_features(t.constant(wave));
                std::vector<Var> preds = b.generate_sequence(f, n_targets);
                std::vector<Var> tv;
                for (const auto& tt : targets) tv.push_back(t.constant(tt));
                return total_loss_node(preds, tv, 1.0, LossReduction::MeanTAndL).total;
            },
            inputs, h);
    });
    return cases;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, int rounds, double h) {
    const Prng root(seed);
    std::vector<GradCheckCase> results;
    for (const auto& c : make_cases()) {
        double worst = 0.0;
        const Prng case_rng = root.split(c.name);
        for (int r = 0; r < rounds; ++r) {
            Prng g = case_rng.split(static_cast<std::uint64_t>(r));
            worst = std::max(worst, c.run(g, h));
        }
        results.push_back({c.name, worst});
    }
    return results;
}

}  // namespace layergen
