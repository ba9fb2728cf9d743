#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "layergen/nn.hpp"
#include "layergen/tape.hpp"
#include "layergen/tensor.hpp"

namespace layergen {

struct ConvLayerSpec {
    std::size_t out_channels, kernel, stride;
};

struct ConvFrontEndConfig {
    std::vector<ConvLayerSpec> layers;
    bool conv_bias = false;
    bool group_norm_first = true;
    std::size_t projection_dim = 768;  // D
    std::size_t pos_conv_kernel = 128;
    std::size_t pos_conv_groups = 16;
};

struct BlockConfig {
    std::size_t d_model = 768;
    std::size_t n_heads = 12;
    std::size_t ffn_hidden = 3072;
};

// Presets addressable by name from run configs.
ConvFrontEndConfig full_size_front_end();
ConvFrontEndConfig desk_front_end();
BlockConfig full_size_block();
BlockConfig desk_block();

enum class VariantKind { ParallelHeads, Autoregressive };

struct StudentVariant {
    VariantKind kind = VariantKind::Autoregressive;
    // ParallelHeads: n_blocks stacked blocks feeding n_targets linear heads.
    std::size_t n_blocks = 1;
    std::size_t n_targets = 3;
    // Autoregressive flags.
    bool cross_attention = false;
    bool skip = false;
    bool output_head = false;

    static StudentVariant parallel(std::size_t blocks, std::size_t targets);
    static StudentVariant autoregressive(bool skip, bool output, bool cross = false);
    static StudentVariant proposed() { return autoregressive(true, true); }
    std::string name() const;
};

struct TeacherConfig {
    ConvFrontEndConfig front_end = full_size_front_end();
    BlockConfig block = full_size_block();
    std::size_t layers = 12;  // L
    std::uint64_t seed = 1;
};

struct StudentConfig {
    StudentVariant variant = StudentVariant::proposed();
    ConvFrontEndConfig front_end = full_size_front_end();
    BlockConfig block = full_size_block();
    std::size_t head_inner = 0;  // 0 -> d_model
    bool step_embedding = false;
    std::size_t max_gen_steps = 8;  // embedding rows when step_embedding is on
    std::size_t trained_targets = 0;  // set by training, persisted in checkpoints
    std::uint64_t seed = 2;
};

// Teacher outputs for one utterance: the feature embedding plus every
// block's hidden layer, all [T,D].
struct LayerStack {
    Tensor f;
    std::vector<Tensor> hidden;
};

// Convolutional front end: conv stack (group norm on the first layer, GELU
// after each), per-frame layer norm, linear projection to D, layer norm,
// plus a same-padded grouped positional convolution added residually.
struct FrontEnd {
    std::vector<ConvLayer> convs;
    bool gn_first = true;
    Norm gn;       // per-channel, first conv layer only
    Norm ln_pre;   // over final conv channels, pre-projection
    Linear proj;   // C_final -> D
    Norm ln_post;  // over D
    ConvLayer pos_conv;
    ConvFrontEndConfig cfg;

    static FrontEnd init(const ConvFrontEndConfig& cfg, const Prng& rng, const std::string& name);
    void params(const std::string& prefix, ParamList& out) const;

    struct B {
        std::vector<ConvLayer::B> convs;
        bool gn_first;
        Norm::B gn;
        Norm::B ln_pre;
        Linear::B proj;
        Norm::B ln_post;
        ConvLayer::B pos_conv;
        std::size_t pos_kernel;
        Var forward(Var wave) const;  // [S] -> [T,D]
    };
    B bind(BindCtx& ctx) const;
};

// Number of frames the front end produces for a given sample count.
std::size_t frame_count(const ConvFrontEndConfig& cfg, std::size_t samples);

// One generation step: O(F(x) + x) with the skip term optional. Kept as a
// free function so tests can drive it with stub F and O.
Var autoregressive_compose(const std::function<Var(Var)>& block_fn,
                           const std::function<Var(Var)>& head_fn, Var x, bool skip);

class TeacherModel {
public:
    explicit TeacherModel(const TeacherConfig& cfg);

    const TeacherConfig& config() const { return cfg_; }

    // Feature embedding plus all L hidden layers; performs no gradient
    // recording and never mutates weights.
    LayerStack forward(const Tensor& wave) const;
    Tensor extract_features(const Tensor& wave) const;

    ParamList parameters() const;

private:
    TeacherConfig cfg_;
    FrontEnd fe_;
    std::vector<Block> blocks_;
};

class StudentModel {
public:
    static StudentModel build(const StudentConfig& cfg);

    const StudentConfig& config() const { return cfg_; }
    void set_trained_targets(std::size_t n) { cfg_.trained_targets = n; }

    // Named trainable tensors in a stable order. The pointers are mutable by
    // design: the optimizer and checkpoint loader write through them while
    // they own the model.
    ParamList parameters() const;
    std::size_t param_count() const;

    struct Bound {
        Tape* tape;
        const StudentModel* model;
        std::vector<std::pair<Tensor*, Var>> order;  // aligned with parameters()
        FrontEnd::B fe;
        std::vector<Block::B> blocks;
        std::optional<OutputHead::B> head;
        std::vector<Linear::B> par_heads;
        std::vector<Var> step_embed;

        Var extract_features(Var wave) const;
        // One Eq-style generation step: O(F(x) + x) with the skip and head
        // applied per the variant flags; cross-attention variants need the
        // feature embedding as memory.
        Var generate_step(Var h_prev, std::optional<Var> memory = std::nullopt,
                          std::size_t step_index = 0) const;
        std::vector<Var> generate_sequence(Var f, std::size_t n) const;
        // ParallelHeads: every target predicted at once from the block taps.
        std::vector<Var> parallel_predictions(Var f) const;
        std::vector<Var> predictions(Var f, std::size_t n) const;
    };
    Bound bind(Tape& tape, bool trainable) const;
    // Forward pass over externally supplied parameter Vars (aligned with
    // parameters()); used by the gradient checker.
    Bound bind_with(Tape& tape, const std::vector<Var>& vars) const;

    // Tensor-level conveniences (fresh constant-only tape inside).
    Tensor extract_features(const Tensor& wave) const;
    Tensor generate_step(const Tensor& h_prev,
                         const std::optional<Tensor>& memory = std::nullopt,
                         std::size_t step_index = 0) const;
    std::vector<Tensor> generate_sequence(const Tensor& f, std::size_t n) const;
    // Full inference: wave -> f and n generated layers. Never consults any
    // teacher.
    LayerStack infer(const Tensor& wave, std::size_t n) const;

private:
    StudentConfig cfg_;
    FrontEnd fe_;
    std::vector<Block> blocks_;
    std::optional<OutputHead> head_;
    std::vector<Linear> par_heads_;
    std::vector<Tensor> step_embed_;

    friend class StudentIo;
};

StudentModel build_student(const StudentConfig& cfg);
std::size_t count_params(const StudentModel& model);
std::size_t count_params(const StudentConfig& cfg);

}  // namespace layergen
