#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "layergen/models.hpp"
#include "layergen/tape.hpp"
#include "layergen/tensor.hpp"

namespace layergen {

// SumT is the literal per-layer time sum; MeanTAndL (default) averages over
// frames and layers so the learning rate decouples from sequence length.
enum class LossReduction { SumT, MeanTAndL };

struct DistillConfig {
    std::vector<std::size_t> target_layers{4, 8, 12};  // 1-based teacher indices
    double lambda = 1.0;
    std::size_t total_steps = 200000;
    double warmup_fraction = 0.07;
    double peak_lr = 2.0e-4;
    std::size_t batch_size = 24;
    std::uint64_t seed = 0;
    LossReduction reduction = LossReduction::MeanTAndL;
    std::size_t val_every = 100;

    void validate(std::size_t teacher_layers) const;
};

// Warmup boundary W = round(warmup_fraction * S); linear 0 -> peak over
// [0, W), then linear peak -> 0 over [W, S).
double lr_at(std::size_t step, std::size_t total_steps, double warmup_fraction, double peak_lr);
double lr_at(std::size_t step, const DistillConfig& cfg);

// u.v / (|u||v|), clamped to [-1,1] against rounding. Throws
// DegenerateVectorError on a zero-norm input.
double cosine(const Tensor& u, const Tensor& v);

// Per-layer distillation loss over [T,D] tensors:
//   sum_t [ (1/D) sum_d |pred-target|  -  lambda * log sigmoid(cos(pred_t, target_t)) ]
// divided by T under MeanTAndL. Parts are exposed so traces can decompose.
struct LossParts {
    Var total;
    Var l1;
    Var cos;  // lambda-weighted
};
LossParts layer_loss_node(Var pred, Var target, double lambda, LossReduction reduction);
LossParts total_loss_node(const std::vector<Var>& preds, const std::vector<Var>& targets,
                          double lambda, LossReduction reduction);

// Tensor-level conveniences (fresh tape inside).
double layer_loss(const Tensor& pred, const Tensor& target, double lambda,
                  LossReduction reduction = LossReduction::SumT);
double total_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets,
                  double lambda, LossReduction reduction);

// ---- optimizer --------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;  // aligned with the parameter list
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(const ParamList& params);
};

// Standard Adam with bias correction, no weight decay. grads aligned with
// params.
void adam_step(const ParamList& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr);

// ---- training ---------------------------------------------------------------

// Deterministic wave source. Implementations must be pure in the index.
class Dataset {
public:
    virtual ~Dataset() = default;
    virtual std::size_t size() const = 0;
    virtual Tensor wave(std::size_t i) const = 0;
    virtual int label(std::size_t i) const { return -1; }
};

struct TraceRow {
    std::size_t step;
    double lr;
    double total;
    double l1;
    double cos;
    std::optional<double> val;
};

struct ValMetrics {
    double total = 0.0;
    std::vector<double> per_layer_l1;
    std::vector<double> per_layer_cos;
};

// No-gradient evaluation of the distillation objective over a dataset, with
// per-layer decomposition. Deterministic given the dataset.
ValMetrics validate(const StudentModel& student, const TeacherModel& teacher,
                    const Dataset& data, const DistillConfig& cfg);

struct TrainResult {
    std::vector<TraceRow> trace;
    double initial_val = 0.0;
    double final_val = 0.0;
};

// Fits the student to the frozen teacher's hidden layers. Mutates the
// student's weights in place; the teacher is read-only throughout. Row 0
// carries the pre-training validation; later validation entries are measured
// after that row's update.
TrainResult train(StudentModel& student, const TeacherModel& teacher, const Dataset& train_data,
                  const Dataset& val_data, const DistillConfig& cfg,
                  std::ostream* progress = nullptr);

void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& out);

}  // namespace layergen
