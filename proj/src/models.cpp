#include "layergen/models.hpp"

#include <utility>

#include "layergen/errors.hpp"

namespace layergen {

// ---- presets ---------------------------------------------------------------

ConvFrontEndConfig full_size_front_end() {
    ConvFrontEndConfig c;
    c.layers = {{512, 10, 5}, {512, 3, 2}, {512, 3, 2}, {512, 3, 2},
                {512, 3, 2},  {512, 2, 2}, {512, 2, 2}};
    c.conv_bias = false;
    c.group_norm_first = true;
    c.projection_dim = 768;
    c.pos_conv_kernel = 128;
    c.pos_conv_groups = 16;
    return c;
}

ConvFrontEndConfig desk_front_end() {
    ConvFrontEndConfig c;
    c.layers = {{32, 8, 4}, {32, 4, 2}};
    c.conv_bias = false;
    c.group_norm_first = true;
    c.projection_dim = 32;
    c.pos_conv_kernel = 8;
    c.pos_conv_groups = 4;
    return c;
}

BlockConfig full_size_block() { return BlockConfig{768, 12, 3072}; }

BlockConfig desk_block() { return BlockConfig{32, 4, 64}; }

// ---- variants -----------------------------------------------------------------

StudentVariant StudentVariant::parallel(std::size_t blocks, std::size_t targets) {
    StudentVariant v;
    v.kind = VariantKind::ParallelHeads;
    v.n_blocks = blocks;
    v.n_targets = targets;
    return v;
}

StudentVariant StudentVariant::autoregressive(bool skip, bool output, bool cross) {
    StudentVariant v;
    v.kind = VariantKind::Autoregressive;
    v.skip = skip;
    v.output_head = output;
    v.cross_attention = cross;
    return v;
}

std::string StudentVariant::name() const {
    if (kind == VariantKind::ParallelHeads)
        return "parallel(" + std::to_string(n_blocks) + "->" + std::to_string(n_targets) + ")";
    std::string s = "ar";
    if (cross_attention) s += "+cross";
    if (skip) s += "+skip";
    if (output_head) s += "+out";
    return s;
}

// ---- front end ------------------------------------------------------------------

FrontEnd FrontEnd::init(const ConvFrontEndConfig& cfg, const Prng& rng, const std::string& name) {
    if (cfg.layers.empty()) throw ConfigError("front end: needs at least one conv layer");
    for (const auto& l : cfg.layers)
        if (l.kernel < 1 || l.stride < 1)
            throw ConfigError("front end: kernel and stride must be >= 1");
    FrontEnd fe;
    fe.cfg = cfg;
    std::size_t c_in = 1;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const auto& l = cfg.layers[i];
        fe.convs.push_back(ConvLayer::init(l.out_channels, c_in, l.kernel, l.stride, 1,
                                           cfg.conv_bias, rng,
                                           name + ".conv" + std::to_string(i)));
        c_in = l.out_channels;
    }
    fe.gn_first = cfg.group_norm_first;
    if (fe.gn_first) fe.gn = Norm::init(cfg.layers[0].out_channels);
    fe.ln_pre = Norm::init(c_in);
    fe.proj = Linear::init(c_in, cfg.projection_dim, rng, name + ".proj");
    fe.ln_post = Norm::init(cfg.projection_dim);
    if (cfg.projection_dim % cfg.pos_conv_groups != 0)
        throw ConfigError("front end: projection dim not divisible by pos conv groups");
    fe.pos_conv = ConvLayer::init(cfg.projection_dim, cfg.projection_dim, cfg.pos_conv_kernel, 1,
                                  cfg.pos_conv_groups, true, rng, name + ".pos_conv");
    return fe;
}

void FrontEnd::params(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < convs.size(); ++i)
        convs[i].params(prefix + ".conv" + std::to_string(i), out);
    if (gn_first) gn.params(prefix + ".gn", out);
    ln_pre.params(prefix + ".ln_pre", out);
    proj.params(prefix + ".proj", out);
    ln_post.params(prefix + ".ln_post", out);
    pos_conv.params(prefix + ".pos_conv", out);
}

FrontEnd::B FrontEnd::bind(BindCtx& ctx) const {
    B b;
    for (const auto& c : convs) b.convs.push_back(c.bind(ctx));
    b.gn_first = gn_first;
    if (gn_first) b.gn = gn.bind(ctx);
    b.ln_pre = ln_pre.bind(ctx);
    b.proj = proj.bind(ctx);
    b.ln_post = ln_post.bind(ctx);
    b.pos_conv = pos_conv.bind(ctx);
    b.pos_kernel = cfg.pos_conv_kernel;
    return b;
}

Var FrontEnd::B::forward(Var wave) const {
    Tape& t = *wave.tape;
    const Tensor& wv = t.value(wave);
    if (wv.rank() != 1) throw ShapeError("extract_features: wave must be rank-1");
    Var x = reshape(wave, {1, wv.extent(0)});
    for (std::size_t i = 0; i < convs.size(); ++i) {
        x = convs[i].forward(x);
        if (i == 0 && gn_first) x = gn.channel_norm(x);
        x = gelu(x);
    }
    Var frames = transpose(x);  // [T, C]
    frames = ln_pre.layer_norm(frames);
    frames = proj.forward(frames);  // [T, D]
    frames = ln_post.layer_norm(frames);
    // Positional conv over [D,T], same padding (one-sample trim when even).
    const std::size_t T = t.value(frames).extent(0);
    const std::size_t pad = pos_kernel / 2;
    Var pc = pos_conv.forward(pad_time(transpose(frames), pad, pad));
    if (pos_kernel % 2 == 0) pc = crop_time(pc, 0, T);
    return frames + transpose(gelu(pc));
}

std::size_t frame_count(const ConvFrontEndConfig& cfg, std::size_t samples) {
    std::size_t T = samples;
    for (const auto& l : cfg.layers) {
        if (T < l.kernel)
            throw ContractError("frame_count: input too short: T=" + std::to_string(T) +
                                " < K=" + std::to_string(l.kernel));
        T = (T - l.kernel) / l.stride + 1;
    }
    return T;
}

// ---- teacher ---------------------------------------------------------------------

TeacherModel::TeacherModel(const TeacherConfig& cfg) : cfg_(cfg) {
    Prng rng(cfg.seed);
    if (cfg.front_end.projection_dim != cfg.block.d_model)
        throw ConfigError("teacher: projection dim must equal block d_model");
    fe_ = FrontEnd::init(cfg.front_end, rng, "fe");
    for (std::size_t l = 0; l < cfg.layers; ++l)
        blocks_.push_back(Block::init(cfg.block.d_model, cfg.block.n_heads, cfg.block.ffn_hidden,
                                      false, rng, "block" + std::to_string(l)));
}

LayerStack TeacherModel::forward(const Tensor& wave) const {
    Tape tape;
    BindCtx ctx{&tape, false, {}};
    FrontEnd::B fe = fe_.bind(ctx);
    std::vector<Block::B> blocks;
    blocks.reserve(blocks_.size());
    for (const auto& b : blocks_) blocks.push_back(b.bind(ctx));

    Var x = fe.forward(tape.constant(wave));
    LayerStack stack;
    stack.f = tape.value(x);
    for (const auto& b : blocks) {
        x = b.forward(x);
        stack.hidden.push_back(tape.value(x));
    }
    return stack;
}

Tensor TeacherModel::extract_features(const Tensor& wave) const {
    Tape tape;
    BindCtx ctx{&tape, false, {}};
    FrontEnd::B fe = fe_.bind(ctx);
    return tape.value(fe.forward(tape.constant(wave)));
}

ParamList TeacherModel::parameters() const {
    ParamList out;
    fe_.params("fe", out);
    for (std::size_t l = 0; l < blocks_.size(); ++l)
        blocks_[l].params("block" + std::to_string(l), out);
    return out;
}

// ---- student ---------------------------------------------------------------------

StudentModel StudentModel::build(const StudentConfig& cfg) {
    if (cfg.front_end.projection_dim != cfg.block.d_model)
        throw ConfigError("student: projection dim must equal block d_model");
    const StudentVariant& v = cfg.variant;
    if (v.kind == VariantKind::ParallelHeads) {
        if (v.n_blocks < 1) throw ConfigError("parallel variant: needs at least one block");
        if (v.n_targets != v.n_blocks && v.n_targets != v.n_blocks + 1)
            throw ConfigError(
                "parallel variant: targets must equal blocks (block taps) or blocks+1 "
                "(feature tap plus block taps), got " +
                std::to_string(v.n_blocks) + " blocks for " + std::to_string(v.n_targets) +
                " targets");
        if (v.cross_attention)
            throw ConfigError("parallel variant: cross attention is an autoregressive option");
    }
    StudentModel m;
    m.cfg_ = cfg;
    Prng rng(cfg.seed);
    m.fe_ = FrontEnd::init(cfg.front_end, rng, "fe");
    const std::size_t n_blocks = v.kind == VariantKind::ParallelHeads ? v.n_blocks : 1;
    const bool cross = v.kind == VariantKind::Autoregressive && v.cross_attention;
    for (std::size_t i = 0; i < n_blocks; ++i)
        m.blocks_.push_back(Block::init(cfg.block.d_model, cfg.block.n_heads,
                                        cfg.block.ffn_hidden, cross, rng,
                                        "block" + std::to_string(i)));
    if (v.kind == VariantKind::Autoregressive && v.output_head) {
        const std::size_t inner = cfg.head_inner ? cfg.head_inner : cfg.block.d_model;
        m.head_ = OutputHead::init(cfg.block.d_model, inner, rng, "head");
    }
    if (v.kind == VariantKind::ParallelHeads) {
        for (std::size_t i = 0; i < v.n_targets; ++i)
            m.par_heads_.push_back(Linear::init(cfg.block.d_model, cfg.block.d_model, rng,
                                                "par_head" + std::to_string(i)));
    }
    if (v.kind == VariantKind::Autoregressive && cfg.step_embedding) {
        for (std::size_t i = 0; i < cfg.max_gen_steps; ++i)
            m.step_embed_.push_back(uniform_init({cfg.block.d_model}, cfg.block.d_model, rng,
                                                 "step_embed" + std::to_string(i)));
    }
    return m;
}

StudentModel build_student(const StudentConfig& cfg) { return StudentModel::build(cfg); }

ParamList StudentModel::parameters() const {
    ParamList out;
    fe_.params("fe", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].params("block" + std::to_string(i), out);
    if (head_) head_->params("head", out);
    for (std::size_t i = 0; i < par_heads_.size(); ++i)
        par_heads_[i].params("par_head" + std::to_string(i), out);
    for (std::size_t i = 0; i < step_embed_.size(); ++i)
        out.push_back({"step_embed" + std::to_string(i),
                       const_cast<Tensor*>(&step_embed_[i])});
    return out;
}

std::size_t StudentModel::param_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->size();
    return n;
}

std::size_t count_params(const StudentModel& model) { return model.param_count(); }

std::size_t count_params(const StudentConfig& cfg) {
    return StudentModel::build(cfg).param_count();
}

namespace {

StudentModel::Bound bind_impl(const StudentModel& model, const FrontEnd& fe,
                              const std::vector<Block>& blocks,
                              const std::optional<OutputHead>& head,
                              const std::vector<Linear>& par_heads,
                              const std::vector<Tensor>& step_embed, BindCtx& ctx) {
    StudentModel::Bound b;
    b.tape = ctx.tape;
    b.model = &model;
    b.fe = fe.bind(ctx);
    for (const auto& blk : blocks) b.blocks.push_back(blk.bind(ctx));
    if (head) b.head = head->bind(ctx);
    for (const auto& h : par_heads) b.par_heads.push_back(h.bind(ctx));
    for (const auto& e : step_embed) b.step_embed.push_back(ctx.bind(e));
    b.order = std::move(ctx.order);
    return b;
}

}  // namespace

StudentModel::Bound StudentModel::bind(Tape& tape, bool trainable) const {
    BindCtx ctx{&tape, trainable, {}};
    return bind_impl(*this, fe_, blocks_, head_, par_heads_, step_embed_, ctx);
}

StudentModel::Bound StudentModel::bind_with(Tape& tape, const std::vector<Var>& vars) const {
    const std::size_t expected = parameters().size();
    if (vars.size() != expected)
        throw ContractError("bind_with: expected " + std::to_string(expected) +
                            " parameter vars, got " + std::to_string(vars.size()));
    BindCtx ctx{&tape, false, {}};
    ctx.supplied = &vars;
    return bind_impl(*this, fe_, blocks_, head_, par_heads_, step_embed_, ctx);
}

Var autoregressive_compose(const std::function<Var(Var)>& block_fn,
                           const std::function<Var(Var)>& head_fn, Var x, bool skip) {
    Var out = block_fn(x);
    if (skip) out = out + x;
    return head_fn(out);
}

Var StudentModel::Bound::extract_features(Var wave) const { return fe.forward(wave); }

Var StudentModel::Bound::generate_step(Var h_prev, std::optional<Var> memory,
                                       std::size_t step_index) const {
    const StudentVariant& v = model->config().variant;
    if (v.kind != VariantKind::Autoregressive)
        throw ContractError("generate_step: model is not an autoregressive variant");
    Var x = h_prev;
    if (!step_embed.empty()) {
        if (step_index >= step_embed.size())
            throw ContractError("generate_step: step index exceeds embedding table");
        x = add_rowvec(x, step_embed[step_index]);
    }
    if (v.cross_attention && !memory)
        throw ContractError("generate_step: cross-attention variant needs the feature memory");
    auto block_fn = [&](Var in) { return blocks[0].forward(in, memory); };
    auto head_fn = [&](Var in) { return head ? head->forward(in) : in; };
    return autoregressive_compose(block_fn, head_fn, x, v.skip);
}

std::vector<Var> StudentModel::Bound::generate_sequence(Var f, std::size_t n) const {
    const StudentVariant& v = model->config().variant;
    std::optional<Var> memory =
        v.cross_attention ? std::optional<Var>(f) : std::nullopt;
    std::vector<Var> out;
    out.reserve(n);
    Var h = f;
    for (std::size_t k = 0; k < n; ++k) {
        h = generate_step(h, memory, k);
        out.push_back(h);
    }
    return out;
}

std::vector<Var> StudentModel::Bound::parallel_predictions(Var f) const {
    const StudentVariant& v = model->config().variant;
    if (v.kind != VariantKind::ParallelHeads)
        throw ContractError("parallel_predictions: model is not a parallel-heads variant");
    std::vector<Var> taps;
    if (v.n_targets == v.n_blocks + 1) taps.push_back(f);  // feature tap
    Var x = f;
    for (const auto& blk : blocks) {
        x = blk.forward(x);
        taps.push_back(x);
    }
    std::vector<Var> preds;
    preds.reserve(par_heads.size());
    for (std::size_t i = 0; i < par_heads.size(); ++i)
        preds.push_back(par_heads[i].forward(taps[i]));
    return preds;
}

std::vector<Var> StudentModel::Bound::predictions(Var f, std::size_t n) const {
    if (model->config().variant.kind == VariantKind::ParallelHeads) {
        std::vector<Var> preds = parallel_predictions(f);
        if (preds.size() != n)
            throw ContractError("predictions: parallel variant emits " +
                                std::to_string(preds.size()) + " layers, " + std::to_string(n) +
                                " requested");
        return preds;
    }
    return generate_sequence(f, n);
}

Tensor StudentModel::extract_features(const Tensor& wave) const {
    Tape tape;
    Bound b = bind(tape, false);
    return tape.value(b.extract_features(tape.constant(wave)));
}

Tensor StudentModel::generate_step(const Tensor& h_prev, const std::optional<Tensor>& memory,
                                   std::size_t step_index) const {
    Tape tape;
    Bound b = bind(tape, false);
    std::optional<Var> mem;
    if (memory) mem = tape.constant(*memory);
    return tape.value(b.generate_step(tape.constant(h_prev), mem, step_index));
}

std::vector<Tensor> StudentModel::generate_sequence(const Tensor& f, std::size_t n) const {
    Tape tape;
    Bound b = bind(tape, false);
    std::vector<Var> vars = b.generate_sequence(tape.constant(f), n);
    std::vector<Tensor> out;
    out.reserve(vars.size());
    for (Var v : vars) out.push_back(tape.value(v));
    return out;
}

LayerStack StudentModel::infer(const Tensor& wave, std::size_t n) const {
    Tape tape;
    Bound b = bind(tape, false);
    Var f = b.extract_features(tape.constant(wave));
    LayerStack stack;
    stack.f = tape.value(f);
    for (Var v : b.predictions(f, n)) stack.hidden.push_back(tape.value(v));
    return stack;
}

}  // namespace layergen
