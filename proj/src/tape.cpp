#include "layergen/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "layergen/errors.hpp"
#include "layergen/kernels.hpp"

namespace layergen {

// ---- scalar math ----------------------------------------------------------

double gelu_scalar(double x) {
    // Phi via erfc keeps precision in the negative tail.
    return x * 0.5 * std::erfc(-x * 0.7071067811865476);
}

double gelu_grad_scalar(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    const double phi_cdf = 0.5 * std::erfc(-x * 0.7071067811865476);
    const double phi_pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid_scalar(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

// ---- Tape core ------------------------------------------------------------

Var Tape::param(Tensor value) { return emit_(std::move(value), true, {}); }

Var Tape::constant(Tensor value) { return emit_(std::move(value), false, {}); }

Var Tape::emit_(Tensor value, bool requires_grad, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
    if (v.tape != this) throw ContractError("value: Var belongs to a different tape");
    return nodes_[v.idx].value;
}

bool Tape::requires_grad(Var v) const { return nodes_[v.idx].requires_grad; }

Tensor& Tape::grad_(std::uint32_t i) {
    Node& n = nodes_[i];
    if (!n.grad_live) {
        n.grad = Tensor::zeros_like(n.value);
        n.grad_live = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Var v) {
    if (v.tape != this) throw ContractError("grad: Var belongs to a different tape");
    return grad_(v.idx);
}

void Tape::backward(Var root) {
    if (root.tape != this) throw ContractError("backward: Var belongs to a different tape");
    const Tensor& rv = nodes_[root.idx].value;
    if (rv.size() != 1)
        throw ContractError("backward: root must be scalar, got shape " + rv.shape_str());
    grad_(root.idx)[0] += 1.0;
    for (std::uint32_t i = root.idx + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.back && n.grad_live) n.back(*this, n.grad);
    }
}

// ---- op helpers -----------------------------------------------------------

namespace {

Tape& tape_of(Var a, const char* op) {
    if (!a.tape) throw ContractError(std::string(op) + ": Var has no tape");
    return *a.tape;
}

void check_same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape) throw ContractError(std::string(op) + ": Vars on different tapes");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch: " + a.shape_str() + " vs " +
                         b.shape_str());
}

// g += delta
void acc(Tensor& g, const Tensor& delta) { kern::axpy(g.data(), 1.0, delta.data(), g.size()); }

}  // namespace

// ---- elementwise ------------------------------------------------------------

Var add(Var a, Var b) {
    Tape& t = tape_of(a, "add");
    check_same_tape(a, b, "add");
    const Tensor& av = t.value_(a.idx);
    const Tensor& bv = t.value_(b.idx);
    check_same_shape(av, bv, "add");
    Tensor out = Tensor::zeros_like(av);
    kern::add(out.data(), av.data(), bv.data(), av.size());
    const bool na = t.requires_grad(a), nb = t.requires_grad(b);
    if (!na && !nb) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [ai = a.idx, bi = b.idx, na, nb](Tape& t, const Tensor& g) {
                       if (na) acc(t.grad_(ai), g);
                       if (nb) acc(t.grad_(bi), g);
                   });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, "sub");
    check_same_tape(a, b, "sub");
    const Tensor& av = t.value_(a.idx);
    const Tensor& bv = t.value_(b.idx);
    check_same_shape(av, bv, "sub");
    Tensor out = Tensor::zeros_like(av);
    kern::sub(out.data(), av.data(), bv.data(), av.size());
    const bool na = t.requires_grad(a), nb = t.requires_grad(b);
    if (!na && !nb) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [ai = a.idx, bi = b.idx, na, nb](Tape& t, const Tensor& g) {
                       if (na) acc(t.grad_(ai), g);
                       if (nb) kern::axpy(t.grad_(bi).data(), -1.0, g.data(), g.size());
                   });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, "mul");
    check_same_tape(a, b, "mul");
    const Tensor& av = t.value_(a.idx);
    const Tensor& bv = t.value_(b.idx);
    check_same_shape(av, bv, "mul");
    Tensor out = Tensor::zeros_like(av);
    kern::mul(out.data(), av.data(), bv.data(), av.size());
    const bool na = t.requires_grad(a), nb = t.requires_grad(b);
    if (!na && !nb) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [ai = a.idx, bi = b.idx, na, nb](Tape& t, const Tensor& g) {
                       const std::size_t n = g.size();
                       if (na) {
                           Tensor d = Tensor::zeros_like(g);
                           kern::mul(d.data(), g.data(), t.value_(bi).data(), n);
                           acc(t.grad_(ai), d);
                       }
                       if (nb) {
                           Tensor d = Tensor::zeros_like(g);
                           kern::mul(d.data(), g.data(), t.value_(ai).data(), n);
                           acc(t.grad_(bi), d);
                       }
                   });
}

Var div(Var a, Var b) {
    Tape& t = tape_of(a, "div");
    check_same_tape(a, b, "div");
    const Tensor& av = t.value_(a.idx);
    const Tensor& bv = t.value_(b.idx);
    check_same_shape(av, bv, "div");
    Tensor out = Tensor::zeros_like(av);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
    const bool na = t.requires_grad(a), nb = t.requires_grad(b);
    if (!na && !nb) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [ai = a.idx, bi = b.idx, oi = static_cast<std::uint32_t>(t.node_count()), na,
                    nb](Tape& t, const Tensor& g) {
                       const Tensor& bv = t.value_(bi);
                       const std::size_t n = g.size();
                       if (na) {
                           Tensor& ga = t.grad_(ai);
                           for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bv[i];
                       }
                       if (nb) {
                           const Tensor& ov = t.value_(oi);
                           Tensor& gb = t.grad_(bi);
                           for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * ov[i] / bv[i];
                       }
                   });
}

Var neg(Var a) {
    Tape& t = tape_of(a, "neg");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::zeros_like(av);
    kern::scale(out.data(), av.data(), -1.0, av.size());
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx](Tape& t, const Tensor& g) {
        kern::axpy(t.grad_(ai).data(), -1.0, g.data(), g.size());
    });
}

Var scale(Var a, double s) {
    Tape& t = tape_of(a, "scale");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::zeros_like(av);
    kern::scale(out.data(), av.data(), s, av.size());
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx, s](Tape& t, const Tensor& g) {
        kern::axpy(t.grad_(ai).data(), s, g.data(), g.size());
    });
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, "matmul");
    check_same_tape(a, b, "matmul");
    const Tensor& av = t.value_(a.idx);
    const Tensor& bv = t.value_(b.idx);
    if (av.rank() != 2 || bv.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands, got " + av.shape_str() + " and " +
                         bv.shape_str());
    if (av.extent(1) != bv.extent(0))
        throw ShapeError("matmul: inner extents differ: " + av.shape_str() + " vs " +
                         bv.shape_str());
    const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    Tensor out({m, n});
    kern::matmul_nn(out.data(), av.data(), bv.data(), m, k, n);
    const bool na = t.requires_grad(a), nb = t.requires_grad(b);
    if (!na && !nb) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [ai = a.idx, bi = b.idx, m, k, n, na, nb](Tape& t, const Tensor& g) {
                       if (na) {  // dA = g * B^T
                           Tensor d({m, k});
                           kern::matmul_nt(d.data(), g.data(), t.value_(bi).data(), m, n, k);
                           acc(t.grad_(ai), d);
                       }
                       if (nb) {  // dB = A^T * g
                           Tensor d({k, n});
                           kern::matmul_tn(d.data(), t.value_(ai).data(), g.data(), k, m, n);
                           acc(t.grad_(bi), d);
                       }
                   });
}

Var transpose(Var a) {
    Tape& t = tape_of(a, "transpose");
    const Tensor& av = t.value_(a.idx);
    if (av.rank() != 2) throw ShapeError("transpose: expects rank-2, got " + av.shape_str());
    const std::size_t r = av.extent(0), c = av.extent(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx, r, c](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_(ai);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j, i);
    });
}

Var reshape(Var a, std::vector<std::size_t> shape) {
    Tape& t = tape_of(a, "reshape");
    const Tensor& av = t.value_(a.idx);
    if (shape_size(shape) != av.size())
        throw ShapeError("reshape: element count mismatch: " + av.shape_str() + " -> " +
                         shape_str(shape));
    Tensor out(shape, std::vector<double>(av.data(), av.data() + av.size()));
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx](Tape& t, const Tensor& g) {
        kern::axpy(t.grad_(ai).data(), 1.0, g.data(), g.size());
    });
}

// ---- nonlinearities ---------------------------------------------------------

Var gelu(Var a) {
    Tape& t = tape_of(a, "gelu");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::zeros_like(av);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = gelu_scalar(av[i]);
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx](Tape& t, const Tensor& g) {
        const Tensor& x = t.value_(ai);
        Tensor& ga = t.grad_(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad_scalar(x[i]);
    });
}

Var abs(Var a) {
    Tape& t = tape_of(a, "abs");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::zeros_like(av);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::fabs(av[i]);
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx](Tape& t, const Tensor& g) {
        const Tensor& x = t.value_(ai);
        Tensor& ga = t.grad_(ai);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
            ga[i] += g[i] * s;
        }
    });
}

Var sqrt(Var a) {
    Tape& t = tape_of(a, "sqrt");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::zeros_like(av);
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i] < 0.0) throw ContractError("sqrt: negative input");
        out[i] = std::sqrt(av[i]);
    }
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [ai = a.idx, oi = static_cast<std::uint32_t>(t.node_count())](
                       Tape& t, const Tensor& g) {
                       const Tensor& y = t.value_(oi);
                       Tensor& ga = t.grad_(ai);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / y[i];
                   });
}

Var log_sigmoid(Var a) {
    Tape& t = tape_of(a, "log_sigmoid");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::zeros_like(av);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = log_sigmoid_scalar(av[i]);
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx](Tape& t, const Tensor& g) {
        const Tensor& x = t.value_(ai);
        Tensor& ga = t.grad_(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_scalar(-x[i]);
    });
}

Var clamp(Var a, double lo, double hi) {
    Tape& t = tape_of(a, "clamp");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::zeros_like(av);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::clamp(av[i], lo, hi);
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx, lo, hi](Tape& t, const Tensor& g) {
        const Tensor& x = t.value_(ai);
        Tensor& ga = t.grad_(ai);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > lo && x[i] < hi) ga[i] += g[i];
    });
}

// ---- reductions -------------------------------------------------------------

Var sum(Var a) {
    Tape& t = tape_of(a, "sum");
    const Tensor& av = t.value_(a.idx);
    Tensor out = Tensor::scalar(kern::sum(av.data(), av.size()));
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_(ai);
        const double g0 = g[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g0;
    });
}

Var mean(Var a) {
    Tape& t = tape_of(a, "mean");
    const std::size_t n = t.value_(a.idx).size();
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_axis(Var a, int axis) {
    Tape& t = tape_of(a, "sum_axis");
    const Tensor& av = t.value_(a.idx);
    if (av.rank() != 2) throw ShapeError("sum_axis: expects rank-2, got " + av.shape_str());
    if (axis != 0 && axis != 1) throw ContractError("sum_axis: axis must be 0 or 1");
    const std::size_t r = av.extent(0), c = av.extent(1);
    Tensor out({axis == 0 ? c : r});
    if (axis == 0) {
        for (std::size_t i = 0; i < r; ++i)
            kern::axpy(out.data(), 1.0, av.data() + i * c, c);
    } else {
        for (std::size_t i = 0; i < r; ++i) out[i] = kern::sum(av.data() + i * c, c);
    }
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [ai = a.idx, axis, r, c](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_(ai);
        if (axis == 0) {
            for (std::size_t i = 0; i < r; ++i) kern::axpy(ga.data() + i * c, 1.0, g.data(), c);
        } else {
            for (std::size_t i = 0; i < r; ++i) {
                const double gi = g[i];
                double* row = ga.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) row[j] += gi;
            }
        }
    });
}

// ---- softmax ----------------------------------------------------------------

namespace {

struct LineIter {
    std::size_t count;   // number of lines
    std::size_t len;     // elements per line
    std::size_t stride;  // distance between consecutive elements of a line
    std::size_t base;    // distance between line starts
};

LineIter lines_for(const Tensor& x, int axis, const char* op) {
    if (x.rank() == 1) {
        if (axis != 0) throw ContractError(std::string(op) + ": axis out of range for rank-1");
        return {1, x.extent(0), 1, 0};
    }
    if (x.rank() == 2) {
        if (axis == 1) return {x.extent(0), x.extent(1), 1, x.extent(1)};
        if (axis == 0) return {x.extent(1), x.extent(0), x.extent(1), 1};
        throw ContractError(std::string(op) + ": axis out of range for rank-2");
    }
    throw ShapeError(std::string(op) + ": expects rank 1 or 2, got " + x.shape_str());
}

}  // namespace

Var softmax(Var a, int axis) {
    Tape& t = tape_of(a, "softmax");
    const Tensor& av = t.value_(a.idx);
    const LineIter it = lines_for(av, axis, "softmax");
    Tensor out = Tensor::zeros_like(av);
    for (std::size_t l = 0; l < it.count; ++l) {
        const std::size_t start = l * it.base;
        double mx = av[start];
        for (std::size_t e = 1; e < it.len; ++e) mx = std::max(mx, av[start + e * it.stride]);
        double z = 0.0;
        for (std::size_t e = 0; e < it.len; ++e) {
            const double v = std::exp(av[start + e * it.stride] - mx);
            out[start + e * it.stride] = v;
            z += v;
        }
        const double inv = 1.0 / z;
        for (std::size_t e = 0; e < it.len; ++e) out[start + e * it.stride] *= inv;
    }
    if (!t.requires_grad(a)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [ai = a.idx, oi = static_cast<std::uint32_t>(t.node_count()), it](
                       Tape& t, const Tensor& g) {
                       const Tensor& y = t.value_(oi);
                       Tensor& ga = t.grad_(ai);
                       for (std::size_t l = 0; l < it.count; ++l) {
                           const std::size_t start = l * it.base;
                           double dotv = 0.0;
                           for (std::size_t e = 0; e < it.len; ++e) {
                               const std::size_t i = start + e * it.stride;
                               dotv += g[i] * y[i];
                           }
                           for (std::size_t e = 0; e < it.len; ++e) {
                               const std::size_t i = start + e * it.stride;
                               ga[i] += y[i] * (g[i] - dotv);
                           }
                       }
                   });
}

// ---- normalization ----------------------------------------------------------

Var row_norm(Var x, double eps) {
    Tape& t = tape_of(x, "row_norm");
    const Tensor& xv = t.value_(x.idx);
    if (xv.rank() != 2) throw ShapeError("row_norm: expects rank-2, got " + xv.shape_str());
    if (eps < 0.0) throw ContractError("row_norm: eps must be >= 0");
    const std::size_t r = xv.extent(0), c = xv.extent(1);
    Tensor out({r, c});
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = xv.data() + i * c;
        const double mu = kern::sum(row, c) / static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);  // biased
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        double* orow = out.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) orow[j] = (row[j] - mu) * is;
    }
    if (!t.requires_grad(x)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [xi = x.idx, oi = static_cast<std::uint32_t>(t.node_count()), r, c,
                    inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
                       const Tensor& y = t.value_(oi);
                       Tensor& gx = t.grad_(xi);
                       const double invc = 1.0 / static_cast<double>(c);
                       for (std::size_t i = 0; i < r; ++i) {
                           const double* grow = g.data() + i * c;
                           const double* yrow = y.data() + i * c;
                           const double gm = kern::sum(grow, c) * invc;
                           const double gym = kern::dot(grow, yrow, c) * invc;
                           double* gxrow = gx.data() + i * c;
                           for (std::size_t j = 0; j < c; ++j)
                               gxrow[j] += inv_std[i] * (grow[j] - gm - yrow[j] * gym);
                       }
                   });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    return add_rowvec(mul_rowvec(row_norm(x, eps), gamma), beta);
}

// ---- convolution ------------------------------------------------------------

namespace {

// Patch matrix for one group: P[t, ci*K + k] = x[c0 + ci, t*stride + k].
Tensor im2row(const Tensor& x, std::size_t c0, std::size_t cin_g, std::size_t K,
              std::size_t stride, std::size_t t_out) {
    const std::size_t T = x.extent(1);
    Tensor p({t_out, cin_g * K});
    for (std::size_t t = 0; t < t_out; ++t) {
        double* prow = p.data() + t * cin_g * K;
        for (std::size_t ci = 0; ci < cin_g; ++ci) {
            const double* xrow = x.data() + (c0 + ci) * T + t * stride;
            for (std::size_t k = 0; k < K; ++k) prow[ci * K + k] = xrow[k];
        }
    }
    return p;
}

}  // namespace

Var conv1d(Var x, Var w, std::optional<Var> bias, std::size_t stride, std::size_t groups) {
    Tape& t = tape_of(x, "conv1d");
    check_same_tape(x, w, "conv1d");
    const Tensor& xv = t.value_(x.idx);
    const Tensor& wv = t.value_(w.idx);
    if (xv.rank() != 2) throw ShapeError("conv1d: input must be [C_in,T], got " + xv.shape_str());
    if (wv.rank() != 3)
        throw ShapeError("conv1d: weight must be [C_out,C_in/groups,K], got " + wv.shape_str());
    if (stride < 1) throw ContractError("conv1d: stride must be >= 1");
    if (groups < 1) throw ContractError("conv1d: groups must be >= 1");
    const std::size_t cin = xv.extent(0), T = xv.extent(1);
    const std::size_t cout = wv.extent(0), K = wv.extent(2);
    if (cin % groups != 0)
        throw ShapeError("conv1d: C_in=" + std::to_string(cin) + " not divisible by groups=" +
                         std::to_string(groups));
    if (cout % groups != 0)
        throw ShapeError("conv1d: C_out=" + std::to_string(cout) + " not divisible by groups=" +
                         std::to_string(groups));
    if (wv.extent(1) != cin / groups)
        throw ShapeError("conv1d: weight C_in/groups extent " + std::to_string(wv.extent(1)) +
                         " does not match input channels " + std::to_string(cin) + "/" +
                         std::to_string(groups));
    if (T < K)
        throw ContractError("conv1d: input too short: T=" + std::to_string(T) +
                            " < K=" + std::to_string(K));
    if (bias) {
        check_same_tape(x, *bias, "conv1d");
        const Tensor& bv = t.value_(bias->idx);
        if (bv.rank() != 1 || bv.extent(0) != cout)
            throw ShapeError("conv1d: bias must be [C_out], got " + bv.shape_str());
    }
    const std::size_t t_out = (T - K) / stride + 1;
    const std::size_t cin_g = cin / groups, cout_g = cout / groups;
    const std::size_t ck = cin_g * K;

    Tensor out({cout, t_out});
    for (std::size_t g = 0; g < groups; ++g) {
        const Tensor p = im2row(xv, g * cin_g, cin_g, K, stride, t_out);
        // rows [g*cout_g, (g+1)*cout_g) of out = W_g [cout_g, ck] * P^T
        kern::matmul_nt(out.data() + g * cout_g * t_out, wv.data() + g * cout_g * ck, p.data(),
                        cout_g, ck, t_out);
    }
    if (bias) {
        const Tensor& bv = t.value_(bias->idx);
        for (std::size_t co = 0; co < cout; ++co) {
            double* row = out.data() + co * t_out;
            for (std::size_t j = 0; j < t_out; ++j) row[j] += bv[co];
        }
    }

    const bool nx = t.requires_grad(x), nw = t.requires_grad(w);
    const bool nb = bias && t.requires_grad(*bias);
    if (!nx && !nw && !nb) return t.emit_(std::move(out), false, {});
    const std::uint32_t bidx = bias ? bias->idx : 0;
    return t.emit_(
        std::move(out), true,
        [xi = x.idx, wi = w.idx, bidx, nx, nw, nb, stride, groups, cin_g, cout_g, K, ck, t_out,
         T](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value_(xi);
            const Tensor& wv = t.value_(wi);
            if (nb) {
                Tensor& gb = t.grad_(bidx);
                for (std::size_t co = 0; co < cout_g * groups; ++co)
                    gb[co] += kern::sum(g.data() + co * t_out, t_out);
            }
            for (std::size_t grp = 0; grp < groups; ++grp) {
                const double* gy = g.data() + grp * cout_g * t_out;  // [cout_g, t_out]
                if (nw) {
                    const Tensor p = im2row(xv, grp * cin_g, cin_g, K, stride, t_out);
                    Tensor dw({cout_g, ck});
                    kern::matmul_nn(dw.data(), gy, p.data(), cout_g, t_out, ck);
                    kern::axpy(t.grad_(wi).data() + grp * cout_g * ck, 1.0, dw.data(),
                               cout_g * ck);
                }
                if (nx) {
                    // dP = gy^T [t_out, cout_g] * W_g [cout_g, ck]
                    Tensor dp({t_out, ck});
                    kern::matmul_tn(dp.data(), gy, wv.data() + grp * cout_g * ck, t_out, cout_g,
                                    ck);
                    Tensor& gx = t.grad_(xi);
                    for (std::size_t tt = 0; tt < t_out; ++tt) {
                        const double* dprow = dp.data() + tt * ck;
                        for (std::size_t ci = 0; ci < cin_g; ++ci) {
                            double* gxrow = gx.data() + (grp * cin_g + ci) * T + tt * stride;
                            for (std::size_t k = 0; k < K; ++k) gxrow[k] += dprow[ci * K + k];
                        }
                    }
                }
            }
        });
}

// ---- shape plumbing -----------------------------------------------------------

Var pad_time(Var x, std::size_t left, std::size_t right) {
    Tape& t = tape_of(x, "pad_time");
    const Tensor& xv = t.value_(x.idx);
    if (xv.rank() != 2) throw ShapeError("pad_time: expects rank-2, got " + xv.shape_str());
    const std::size_t C = xv.extent(0), T = xv.extent(1);
    Tensor out({C, T + left + right});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < T; ++j) out.at(c, left + j) = xv.at(c, j);
    if (!t.requires_grad(x)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [xi = x.idx, left, C, T](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_(xi);
        const std::size_t gT = g.extent(1);
        for (std::size_t c = 0; c < C; ++c)
            kern::axpy(gx.data() + c * T, 1.0, g.data() + c * gT + left, T);
    });
}

Var crop_time(Var x, std::size_t t0, std::size_t len) {
    Tape& t = tape_of(x, "crop_time");
    const Tensor& xv = t.value_(x.idx);
    if (xv.rank() != 2) throw ShapeError("crop_time: expects rank-2, got " + xv.shape_str());
    const std::size_t C = xv.extent(0), T = xv.extent(1);
    if (t0 + len > T) throw ContractError("crop_time: range exceeds extent");
    Tensor out({C, len});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < len; ++j) out.at(c, j) = xv.at(c, t0 + j);
    if (!t.requires_grad(x)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [xi = x.idx, t0, C, T, len](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_(xi);
        for (std::size_t c = 0; c < C; ++c)
            kern::axpy(gx.data() + c * T + t0, 1.0, g.data() + c * len, len);
    });
}

Var slice_cols(Var x, std::size_t c0, std::size_t c1) {
    Tape& t = tape_of(x, "slice_cols");
    const Tensor& xv = t.value_(x.idx);
    if (xv.rank() != 2) throw ShapeError("slice_cols: expects rank-2, got " + xv.shape_str());
    const std::size_t r = xv.extent(0), c = xv.extent(1);
    if (c0 >= c1 || c1 > c) throw ContractError("slice_cols: bad column range");
    const std::size_t w = c1 - c0;
    Tensor out({r, w});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = xv.at(i, c0 + j);
    if (!t.requires_grad(x)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [xi = x.idx, c0, r, c, w](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_(xi);
        for (std::size_t i = 0; i < r; ++i)
            kern::axpy(gx.data() + i * c + c0, 1.0, g.data() + i * w, w);
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw ContractError("concat_cols: empty input list");
    Tape& t = tape_of(xs[0], "concat_cols");
    std::size_t total = 0;
    const std::size_t r = t.value_(xs[0].idx).extent(0);
    bool ng = false;
    for (Var v : xs) {
        check_same_tape(xs[0], v, "concat_cols");
        const Tensor& tv = t.value_(v.idx);
        if (tv.rank() != 2 || tv.extent(0) != r)
            throw ShapeError("concat_cols: incompatible shape " + tv.shape_str());
        total += tv.extent(1);
        ng = ng || t.requires_grad(v);
    }
    Tensor out({r, total});
    std::size_t off = 0;
    std::vector<std::uint32_t> idxs;
    std::vector<std::size_t> widths, offs;
    for (Var v : xs) {
        const Tensor& tv = t.value_(v.idx);
        const std::size_t w = tv.extent(1);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out.at(i, off + j) = tv.at(i, j);
        idxs.push_back(v.idx);
        widths.push_back(w);
        offs.push_back(off);
        off += w;
    }
    if (!ng) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [idxs = std::move(idxs), widths = std::move(widths), offs = std::move(offs), r,
                    total](Tape& t, const Tensor& g) {
                       for (std::size_t p = 0; p < idxs.size(); ++p) {
                           if (!t.requires_grad(Var{&t, idxs[p]})) continue;
                           Tensor& gx = t.grad_(idxs[p]);
                           for (std::size_t i = 0; i < r; ++i)
                               kern::axpy(gx.data() + i * widths[p], 1.0,
                                          g.data() + i * total + offs[p], widths[p]);
                       }
                   });
}

// ---- broadcasts -----------------------------------------------------------------

namespace {

void check_vec_match(const Tensor& x, const Tensor& v, std::size_t extent, const char* op) {
    if (x.rank() != 2) throw ShapeError(std::string(op) + ": expects rank-2, got " + x.shape_str());
    if (v.rank() != 1 || v.extent(0) != extent)
        throw ShapeError(std::string(op) + ": vector shape " + v.shape_str() +
                         " does not match tensor " + x.shape_str());
}

}  // namespace

Var add_rowvec(Var x, Var v) {
    Tape& t = tape_of(x, "add_rowvec");
    check_same_tape(x, v, "add_rowvec");
    const Tensor& xv = t.value_(x.idx);
    const Tensor& vv = t.value_(v.idx);
    check_vec_match(xv, vv, xv.rank() == 2 ? xv.extent(1) : 0, "add_rowvec");
    const std::size_t r = xv.extent(0), c = xv.extent(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
        kern::add(out.data() + i * c, xv.data() + i * c, vv.data(), c);
    const bool nx = t.requires_grad(x), nv = t.requires_grad(v);
    if (!nx && !nv) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [xi = x.idx, vi = v.idx, nx, nv, r, c](Tape& t, const Tensor& g) {
                       if (nx) acc(t.grad_(xi), g);
                       if (nv) {
                           Tensor& gv = t.grad_(vi);
                           for (std::size_t i = 0; i < r; ++i)
                               kern::axpy(gv.data(), 1.0, g.data() + i * c, c);
                       }
                   });
}

Var mul_rowvec(Var x, Var v) {
    Tape& t = tape_of(x, "mul_rowvec");
    check_same_tape(x, v, "mul_rowvec");
    const Tensor& xv = t.value_(x.idx);
    const Tensor& vv = t.value_(v.idx);
    check_vec_match(xv, vv, xv.rank() == 2 ? xv.extent(1) : 0, "mul_rowvec");
    const std::size_t r = xv.extent(0), c = xv.extent(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
        kern::mul(out.data() + i * c, xv.data() + i * c, vv.data(), c);
    const bool nx = t.requires_grad(x), nv = t.requires_grad(v);
    if (!nx && !nv) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [xi = x.idx, vi = v.idx, nx, nv, r, c](Tape& t, const Tensor& g) {
                       const Tensor& xv = t.value_(xi);
                       const Tensor& vv = t.value_(vi);
                       if (nx) {
                           Tensor& gx = t.grad_(xi);
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                   gx.at(i, j) += g.at(i, j) * vv[j];
                       }
                       if (nv) {
                           Tensor& gv = t.grad_(vi);
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                   gv[j] += g.at(i, j) * xv.at(i, j);
                       }
                   });
}

Var add_colvec(Var x, Var v) {
    Tape& t = tape_of(x, "add_colvec");
    check_same_tape(x, v, "add_colvec");
    const Tensor& xv = t.value_(x.idx);
    const Tensor& vv = t.value_(v.idx);
    check_vec_match(xv, vv, xv.rank() == 2 ? xv.extent(0) : 0, "add_colvec");
    const std::size_t r = xv.extent(0), c = xv.extent(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        const double vi = vv[i];
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) + vi;
    }
    const bool nx = t.requires_grad(x), nv = t.requires_grad(v);
    if (!nx && !nv) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [xi = x.idx, vi = v.idx, nx, nv, r, c](Tape& t, const Tensor& g) {
                       if (nx) acc(t.grad_(xi), g);
                       if (nv) {
                           Tensor& gv = t.grad_(vi);
                           for (std::size_t i = 0; i < r; ++i)
                               gv[i] += kern::sum(g.data() + i * c, c);
                       }
                   });
}

Var mul_colvec(Var x, Var v) {
    Tape& t = tape_of(x, "mul_colvec");
    check_same_tape(x, v, "mul_colvec");
    const Tensor& xv = t.value_(x.idx);
    const Tensor& vv = t.value_(v.idx);
    check_vec_match(xv, vv, xv.rank() == 2 ? xv.extent(0) : 0, "mul_colvec");
    const std::size_t r = xv.extent(0), c = xv.extent(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
        kern::scale(out.data() + i * c, xv.data() + i * c, vv[i], c);
    const bool nx = t.requires_grad(x), nv = t.requires_grad(v);
    if (!nx && !nv) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true,
                   [xi = x.idx, vi = v.idx, nx, nv, r, c](Tape& t, const Tensor& g) {
                       const Tensor& xv = t.value_(xi);
                       const Tensor& vv = t.value_(vi);
                       if (nx) {
                           Tensor& gx = t.grad_(xi);
                           for (std::size_t i = 0; i < r; ++i)
                               kern::axpy(gx.data() + i * c, vv[i], g.data() + i * c, c);
                       }
                       if (nv) {
                           Tensor& gv = t.grad_(vi);
                           for (std::size_t i = 0; i < r; ++i)
                               gv[i] += kern::dot(g.data() + i * c, xv.data() + i * c, c);
                       }
                   });
}

// ---- classification loss --------------------------------------------------------

Var cross_entropy(Var z, std::size_t label) {
    Tape& t = tape_of(z, "cross_entropy");
    const Tensor& zv = t.value_(z.idx);
    if (zv.rank() != 1)
        throw ShapeError("cross_entropy: expects rank-1 logits, got " + zv.shape_str());
    const std::size_t k = zv.extent(0);
    if (label >= k) throw ContractError("cross_entropy: label out of range");
    double mx = zv[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, zv[i]);
    double z0 = 0.0;
    for (std::size_t i = 0; i < k; ++i) z0 += std::exp(zv[i] - mx);
    const double lse = mx + std::log(z0);
    Tensor out = Tensor::scalar(lse - zv[label]);
    if (!t.requires_grad(z)) return t.emit_(std::move(out), false, {});
    return t.emit_(std::move(out), true, [zi = z.idx, label, k](Tape& t, const Tensor& g) {
        const Tensor& zv = t.value_(zi);
        double mx = zv[0];
        for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, zv[i]);
        double z0 = 0.0;
        for (std::size_t i = 0; i < k; ++i) z0 += std::exp(zv[i] - mx);
        Tensor& gz = t.grad_(zi);
        const double g0 = g[0];
        for (std::size_t i = 0; i < k; ++i) {
            double p = std::exp(zv[i] - mx) / z0;
            if (i == label) p -= 1.0;
            gz[i] += g0 * p;
        }
    });
}

}  // namespace layergen
