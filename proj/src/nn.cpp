#include "layergen/nn.hpp"

#include <cmath>

#include "layergen/errors.hpp"

namespace layergen {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, const Prng& model_rng,
                    const std::string& name) {
    Prng rng = model_rng.split(name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

// ---- Linear -----------------------------------------------------------------

Linear Linear::init(std::size_t in, std::size_t out, const Prng& rng, const std::string& name,
                    bool bias) {
    Linear l;
    l.w = uniform_init({in, out}, in, rng, name + ".w");
    l.has_bias = bias;
    if (bias) l.b = Tensor({out});
    return l;
}

void Linear::params(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", const_cast<Tensor*>(&w)});
    if (has_bias) out.push_back({prefix + ".b", const_cast<Tensor*>(&b)});
}

Linear::B Linear::bind(BindCtx& ctx) const {
    B bound;
    bound.w = ctx.bind(w);
    bound.has_bias = has_bias;
    if (has_bias) bound.b = ctx.bind(b);
    return bound;
}

Var Linear::B::forward(Var x) const {
    Var y = matmul(x, w);
    return has_bias ? add_rowvec(y, b) : y;
}

// ---- Norm -------------------------------------------------------------------

Norm Norm::init(std::size_t dim) {
    Norm n;
    n.gamma = Tensor::full({dim}, 1.0);
    n.beta = Tensor({dim});
    return n;
}

void Norm::params(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", const_cast<Tensor*>(&gamma)});
    out.push_back({prefix + ".beta", const_cast<Tensor*>(&beta)});
}

Norm::B Norm::bind(BindCtx& ctx) const { return B{ctx.bind(gamma), ctx.bind(beta)}; }

Var Norm::B::layer_norm(Var x) const { return layergen::layer_norm(x, gamma, beta, kNormEps); }

Var Norm::B::channel_norm(Var x) const {
    return add_colvec(mul_colvec(row_norm(x, kNormEps), gamma), beta);
}

// ---- ConvLayer ----------------------------------------------------------------

ConvLayer ConvLayer::init(std::size_t c_out, std::size_t c_in, std::size_t kernel,
                          std::size_t stride, std::size_t groups, bool bias, const Prng& rng,
                          const std::string& name) {
    if (c_in % groups != 0 || c_out % groups != 0)
        throw ConfigError("conv layer: channels not divisible by groups");
    ConvLayer c;
    const std::size_t cin_g = c_in / groups;
    c.w = uniform_init({c_out, cin_g, kernel}, cin_g * kernel, rng, name + ".w");
    c.has_bias = bias;
    if (bias) c.b = Tensor({c_out});
    c.stride = stride;
    c.groups = groups;
    return c;
}

void ConvLayer::params(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", const_cast<Tensor*>(&w)});
    if (has_bias) out.push_back({prefix + ".b", const_cast<Tensor*>(&b)});
}

ConvLayer::B ConvLayer::bind(BindCtx& ctx) const {
    B bound;
    bound.w = ctx.bind(w);
    bound.has_bias = has_bias;
    if (has_bias) bound.b = ctx.bind(b);
    bound.stride = stride;
    bound.groups = groups;
    return bound;
}

Var ConvLayer::B::forward(Var x) const {
    return conv1d(x, w, has_bias ? std::optional<Var>(b) : std::nullopt, stride, groups);
}

// ---- Mha --------------------------------------------------------------------

Mha Mha::init(std::size_t d_model, std::size_t n_heads, const Prng& rng,
              const std::string& name) {
    if (d_model % n_heads != 0)
        throw ConfigError("mha: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    Mha m;
    m.q = Linear::init(d_model, d_model, rng, name + ".q");
    m.k = Linear::init(d_model, d_model, rng, name + ".k");
    m.v = Linear::init(d_model, d_model, rng, name + ".v");
    m.o = Linear::init(d_model, d_model, rng, name + ".o");
    m.n_heads = n_heads;
    return m;
}

void Mha::params(const std::string& prefix, ParamList& out) const {
    q.params(prefix + ".q", out);
    k.params(prefix + ".k", out);
    v.params(prefix + ".v", out);
    o.params(prefix + ".o", out);
}

Mha::B Mha::bind(BindCtx& ctx) const {
    return B{q.bind(ctx), k.bind(ctx), v.bind(ctx), o.bind(ctx), n_heads};
}

Var Mha::B::forward(Var q_in, Var kv_in) const {
    Tape& t = *q_in.tape;
    const std::size_t d = t.value(q_in).extent(1);
    const std::size_t dh = d / n_heads;
    Var Q = q.forward(q_in);
    Var K = k.forward(kv_in);
    Var V = v.forward(kv_in);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Var qh = slice_cols(Q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(K, h * dh, (h + 1) * dh);
        Var vh = slice_cols(V, h * dh, (h + 1) * dh);
        Var scores = matmul(qh, transpose(kh)) * inv_sqrt_dh;
        heads.push_back(matmul(softmax(scores, 1), vh));
    }
    return o.forward(concat_cols(heads));
}

// ---- Block ---------------------------------------------------------------------

Block Block::init(std::size_t d_model, std::size_t n_heads, std::size_t ffn_hidden,
                  bool cross_attention, const Prng& rng, const std::string& name) {
    Block b;
    b.ln1 = Norm::init(d_model);
    b.attn = Mha::init(d_model, n_heads, rng, name + ".attn");
    b.has_cross = cross_attention;
    if (cross_attention) {
        b.lnc = Norm::init(d_model);
        b.cross = Mha::init(d_model, n_heads, rng, name + ".cross");
    }
    b.ln2 = Norm::init(d_model);
    b.fc1 = Linear::init(d_model, ffn_hidden, rng, name + ".fc1");
    b.fc2 = Linear::init(ffn_hidden, d_model, rng, name + ".fc2");
    return b;
}

void Block::params(const std::string& prefix, ParamList& out) const {
    ln1.params(prefix + ".ln1", out);
    attn.params(prefix + ".attn", out);
    if (has_cross) {
        lnc.params(prefix + ".lnc", out);
        cross.params(prefix + ".cross", out);
    }
    ln2.params(prefix + ".ln2", out);
    fc1.params(prefix + ".fc1", out);
    fc2.params(prefix + ".fc2", out);
}

Block::B Block::bind(BindCtx& ctx) const {
    B b;
    b.ln1 = ln1.bind(ctx);
    b.attn = attn.bind(ctx);
    b.has_cross = has_cross;
    if (has_cross) {
        b.lnc = lnc.bind(ctx);
        b.cross = cross.bind(ctx);
    }
    b.ln2 = ln2.bind(ctx);
    b.fc1 = fc1.bind(ctx);
    b.fc2 = fc2.bind(ctx);
    return b;
}

Var Block::B::forward(Var x, std::optional<Var> memory) const {
    Var a = ln1.layer_norm(x);
    x = x + attn.forward(a, a);
    if (has_cross) {
        if (!memory)
            throw ContractError("block: cross-attention requires a memory stream");
        x = x + cross.forward(lnc.layer_norm(x), *memory);
    }
    Var h = ln2.layer_norm(x);
    return x + fc2.forward(gelu(fc1.forward(h)));
}

// ---- OutputHead -----------------------------------------------------------------

OutputHead OutputHead::init(std::size_t d_model, std::size_t inner, const Prng& rng,
                            const std::string& name) {
    OutputHead h;
    h.fc1 = Linear::init(d_model, inner, rng, name + ".fc1");
    h.fc2 = Linear::init(inner, d_model, rng, name + ".fc2");
    return h;
}

void OutputHead::params(const std::string& prefix, ParamList& out) const {
    fc1.params(prefix + ".fc1", out);
    fc2.params(prefix + ".fc2", out);
}

OutputHead::B OutputHead::bind(BindCtx& ctx) const { return B{fc1.bind(ctx), fc2.bind(ctx)}; }

Var OutputHead::B::forward(Var x) const { return fc2.forward(gelu(fc1.forward(x))); }

}  // namespace layergen
