#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "layergen/tensor.hpp"

namespace layergen {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t idx = 0;
};

// Reverse-mode gradient tape. Ops evaluate eagerly and record a backward
// closure when any input requires gradients. backward() replays the recorded
// nodes once, newest to oldest; gradients accumulate additively across
// fan-out. Values are immutable once recorded.
class Tape {
public:
    using BackFn = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var param(Tensor value);     // leaf that receives gradients
    Var constant(Tensor value);  // leaf that does not

    const Tensor& value(Var v) const;
    // Gradient accumulated for v; zeros if backward never touched it.
    const Tensor& grad(Var v);
    bool requires_grad(Var v) const;
    std::size_t node_count() const { return nodes_.size(); }

    // Seeds d(root)/d(root) = 1 and replays the tape from root down.
    // root must be scalar-valued.
    void backward(Var root);

    // Hooks for op implementations; not part of the public surface.
    Var emit_(Tensor value, bool requires_grad, BackFn back);
    const Tensor& value_(std::uint32_t i) const { return nodes_[i].value; }
    Tensor& grad_(std::uint32_t i);  // allocates zeros on first touch

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_live = false;
        BackFn back;
    };
    std::vector<Node> nodes_;
};

// ---- recorded primitives -------------------------------------------------
// All ops validate shapes eagerly and are pure: identical inputs produce
// bit-identical outputs.

Var add(Var a, Var b);   // elementwise, same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);

Var matmul(Var a, Var b);  // [m,k] x [k,n] -> [m,n]
Var transpose(Var a);      // 2-D
Var reshape(Var a, std::vector<std::size_t> shape);  // same element count

Var gelu(Var a);  // x * Phi(x), exact erf form
Var abs(Var a);
Var sqrt(Var a);  // elementwise; inputs must be positive
Var log_sigmoid(Var a);
Var clamp(Var a, double lo, double hi);

Var sum(Var a);               // all elements -> scalar []
Var mean(Var a);              // sum / size
Var sum_axis(Var a, int axis);  // 2-D only; axis 0 -> [cols], axis 1 -> [rows]

// Exponentials normalized along `axis`, shift-stable. Rank 1 or 2.
Var softmax(Var a, int axis);

// Per-row standardization of a 2-D tensor: (x - mean) / sqrt(var + eps),
// variance biased (1/D).
Var row_norm(Var x, double eps);

// row_norm followed by per-column affine gamma/beta (both [D]).
Var layer_norm(Var x, Var gamma, Var beta, double eps);

// Grouped valid-mode cross-correlation. x [C_in,T], w [C_out,C_in/groups,K],
// bias optional [C_out]. T_out = (T-K)/stride + 1, no padding.
Var conv1d(Var x, Var w, std::optional<Var> bias, std::size_t stride, std::size_t groups);

Var pad_time(Var x, std::size_t left, std::size_t right);  // [C,T] -> [C,T+l+r], zero fill
Var crop_time(Var x, std::size_t t0, std::size_t len);     // [C,T] -> [C,len]

Var slice_cols(Var x, std::size_t c0, std::size_t c1);  // [T,D] -> [T,c1-c0]
Var concat_cols(const std::vector<Var>& xs);            // column-wise concat

Var add_rowvec(Var x, Var v);  // [T,D] + [D] broadcast over rows
Var mul_rowvec(Var x, Var v);
Var add_colvec(Var x, Var v);  // [C,T] + [C] broadcast over columns
Var mul_colvec(Var x, Var v);

// -log softmax(z)[label] for a rank-1 logits vector.
Var cross_entropy(Var z, std::size_t label);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return neg(a); }

// Scalar math shared with the non-tape paths.
double gelu_scalar(double x);
double gelu_grad_scalar(double x);
double sigmoid_scalar(double x);
double log_sigmoid_scalar(double x);

}  // namespace layergen
