#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "layergen/prng.hpp"
#include "layergen/tape.hpp"
#include "layergen/tensor.hpp"

// Network building blocks. Each layer owns plain weight tensors and binds
// them onto a Tape per forward pass (as params when training, constants
// otherwise). Binding order is the parameter order used everywhere else.
namespace layergen {

struct ParamRef {
    std::string name;
    Tensor* tensor;
};
using ParamList = std::vector<ParamRef>;

// Per-tape binding pass. Records (tensor, var) pairs in traversal order so
// the optimizer can pull gradients aligned with parameters(). When `supplied`
// is set, existing Vars are consumed in traversal order instead of the
// layer's own weights; the gradient checker drives models through this.
struct BindCtx {
    Tape* tape;
    bool trainable;
    std::vector<std::pair<Tensor*, Var>> order;
    const std::vector<Var>* supplied = nullptr;
    std::size_t supplied_pos = 0;

    Var bind(const Tensor& t) {
        Var v;
        if (supplied) {
            v = (*supplied)[supplied_pos++];
        } else {
            v = trainable ? tape->param(t) : tape->constant(t);
        }
        // The train loop owns its model exclusively; mutable access to the
        // weight tensors is what the optimizer updates through.
        order.emplace_back(const_cast<Tensor*>(&t), v);
        return v;
    }
};

constexpr double kNormEps = 1e-5;

// Weight init: symmetric uniform scaled by 1/sqrt(fan_in), per-tensor stream
// keyed by the parameter name so init does not depend on traversal order.
Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, const Prng& model_rng,
                    const std::string& name);

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]; empty when bias disabled
    bool has_bias = true;

    static Linear init(std::size_t in, std::size_t out, const Prng& rng, const std::string& name,
                       bool bias = true);
    void params(const std::string& prefix, ParamList& out) const;

    struct B {
        Var w, b;
        bool has_bias;
        Var forward(Var x) const;  // [T,in] -> [T,out]
    };
    B bind(BindCtx& ctx) const;
};

// Affine normalization parameters (gamma, beta of length dim).
struct Norm {
    Tensor gamma, beta;

    static Norm init(std::size_t dim);
    void params(const std::string& prefix, ParamList& out) const;

    struct B {
        Var gamma, beta;
        // Standard layer norm over the last axis of [T,D].
        Var layer_norm(Var x) const;
        // Per-channel norm of [C,T]: each channel standardized over time.
        Var channel_norm(Var x) const;
    };
    B bind(BindCtx& ctx) const;
};

struct ConvLayer {
    Tensor w;  // [C_out, C_in/groups, K]
    Tensor b;  // [C_out]; empty when bias disabled
    bool has_bias = false;
    std::size_t stride = 1;
    std::size_t groups = 1;

    static ConvLayer init(std::size_t c_out, std::size_t c_in, std::size_t kernel,
                          std::size_t stride, std::size_t groups, bool bias, const Prng& rng,
                          const std::string& name);
    void params(const std::string& prefix, ParamList& out) const;

    struct B {
        Var w, b;
        bool has_bias;
        std::size_t stride, groups;
        Var forward(Var x) const;  // valid-mode
    };
    B bind(BindCtx& ctx) const;
};

// Multi-head attention; queries from one stream, keys/values from another.
struct Mha {
    Linear q, k, v, o;
    std::size_t n_heads;

    static Mha init(std::size_t d_model, std::size_t n_heads, const Prng& rng,
                    const std::string& name);
    void params(const std::string& prefix, ParamList& out) const;

    struct B {
        Linear::B q, k, v, o;
        std::size_t n_heads;
        Var forward(Var q_in, Var kv_in) const;
    };
    B bind(BindCtx& ctx) const;
};

// Pre-norm transformer block: self-attention, optional cross-attention
// (keys/values from a memory stream), then the GELU feed-forward.
struct Block {
    Norm ln1;
    Mha attn;
    bool has_cross = false;
    Norm lnc;
    Mha cross;
    Norm ln2;
    Linear fc1, fc2;

    static Block init(std::size_t d_model, std::size_t n_heads, std::size_t ffn_hidden,
                      bool cross_attention, const Prng& rng, const std::string& name);
    void params(const std::string& prefix, ParamList& out) const;

    struct B {
        Norm::B ln1;
        Mha::B attn;
        bool has_cross;
        Norm::B lnc;
        Mha::B cross;
        Norm::B ln2;
        Linear::B fc1, fc2;
        Var forward(Var x, std::optional<Var> memory = std::nullopt) const;
    };
    B bind(BindCtx& ctx) const;
};

// linear -> GELU -> linear, output dimension equals input dimension.
struct OutputHead {
    Linear fc1, fc2;

    static OutputHead init(std::size_t d_model, std::size_t inner, const Prng& rng,
                           const std::string& name);
    void params(const std::string& prefix, ParamList& out) const;

    struct B {
        Linear::B fc1, fc2;
        Var forward(Var x) const;
    };
    B bind(BindCtx& ctx) const;
};

}  // namespace layergen
