#include "layergen/distill.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <unordered_map>

#include "layergen/errors.hpp"
#include "layergen/kernels.hpp"
#include "layergen/prng.hpp"

namespace layergen {

// ---- schedule ----------------------------------------------------------------

double lr_at(std::size_t step, std::size_t total_steps, double warmup_fraction, double peak_lr) {
    if (step >= total_steps)
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0," +
                            std::to_string(total_steps) + ")");
    const auto warmup =
        static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
    if (step < warmup)
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    return peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

double lr_at(std::size_t step, const DistillConfig& cfg) {
    return lr_at(step, cfg.total_steps, cfg.warmup_fraction, cfg.peak_lr);
}

void DistillConfig::validate(std::size_t teacher_layers) const {
    if (total_steps < 1) throw ConfigError("distill: total_steps must be >= 1");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
        throw ConfigError("distill: warmup_fraction must be in (0,1)");
    if (batch_size < 1) throw ConfigError("distill: batch_size must be >= 1");
    if (lambda < 0.0) throw ConfigError("distill: lambda must be >= 0");
    if (val_every < 1) throw ConfigError("distill: val_every must be >= 1");
    if (target_layers.empty()) throw ConfigError("distill: target_layers must not be empty");
    std::size_t prev = 0;
    for (std::size_t t : target_layers) {
        if (t <= prev)
            throw ConfigError("distill: target_layers must be strictly increasing");
        if (t < 1 || t > teacher_layers)
            throw ConfigError("distill: target layer " + std::to_string(t) + " outside [1," +
                              std::to_string(teacher_layers) + "]");
        prev = t;
    }
}

// ---- losses --------------------------------------------------------------------

double cosine(const Tensor& u, const Tensor& v) {
    if (!u.same_shape(v))
        throw ShapeError("cosine: shape mismatch: " + u.shape_str() + " vs " + v.shape_str());
    const double uu = kern::dot(u.data(), u.data(), u.size());
    const double vv = kern::dot(v.data(), v.data(), v.size());
    if (uu == 0.0 || vv == 0.0)
        throw DegenerateVectorError("cosine: zero-norm input vector");
    const double uv = kern::dot(u.data(), v.data(), u.size());
    double c = uv / (std::sqrt(uu) * std::sqrt(vv));
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

LossParts layer_loss_node(Var pred, Var target, double lambda, LossReduction reduction) {
    Tape& t = *pred.tape;
    const Tensor& pv = t.value(pred);
    const Tensor& tv = t.value(target);
    if (pv.rank() != 2 || !pv.same_shape(tv))
        throw ShapeError("layer_loss: shape mismatch: " + pv.shape_str() + " vs " +
                         tv.shape_str());
    const std::size_t T = pv.extent(0), D = pv.extent(1);

    Var l1 = scale(sum(abs(pred - target)), 1.0 / static_cast<double>(D));

    Var cos_term;
    if (lambda != 0.0) {
        Var psq = sum_axis(pred * pred, 1);
        Var tsq = sum_axis(target * target, 1);
        const Tensor& psv = t.value(psq);
        const Tensor& tsv = t.value(tsq);
        for (std::size_t i = 0; i < T; ++i)
            if (psv[i] == 0.0 || tsv[i] == 0.0)
                throw DegenerateVectorError("layer_loss: zero-norm frame " + std::to_string(i));
        Var dots = sum_axis(mul(pred, target), 1);
        Var cosv = clamp(div(dots, mul(sqrt(psq), sqrt(tsq))), -1.0, 1.0);
        cos_term = scale(sum(neg(log_sigmoid(cosv))), lambda);
    } else {
        cos_term = t.constant(Tensor::scalar(0.0));
    }

    if (reduction == LossReduction::MeanTAndL) {
        const double inv_t = 1.0 / static_cast<double>(T);
        l1 = scale(l1, inv_t);
        cos_term = scale(cos_term, inv_t);
    }
    return LossParts{l1 + cos_term, l1, cos_term};
}

LossParts total_loss_node(const std::vector<Var>& preds, const std::vector<Var>& targets,
                          double lambda, LossReduction reduction) {
    if (preds.size() != targets.size())
        throw ContractError("total_loss: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(targets.size()) + " targets");
    if (preds.empty()) throw ContractError("total_loss: empty layer lists");
    std::optional<LossParts> acc;
    for (std::size_t l = 0; l < preds.size(); ++l) {
        LossParts p = layer_loss_node(preds[l], targets[l], lambda, reduction);
        if (!acc) {
            acc = p;
        } else {
            acc->total = acc->total + p.total;
            acc->l1 = acc->l1 + p.l1;
            acc->cos = acc->cos + p.cos;
        }
    }
    if (reduction == LossReduction::MeanTAndL) {
        const double inv_l = 1.0 / static_cast<double>(preds.size());
        acc->total = scale(acc->total, inv_l);
        acc->l1 = scale(acc->l1, inv_l);
        acc->cos = scale(acc->cos, inv_l);
    }
    return *acc;
}

double layer_loss(const Tensor& pred, const Tensor& target, double lambda,
                  LossReduction reduction) {
    Tape tape;
    LossParts p =
        layer_loss_node(tape.constant(pred), tape.constant(target), lambda, reduction);
    return tape.value(p.total)[0];
}

double total_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets,
                  double lambda, LossReduction reduction) {
    Tape tape;
    std::vector<Var> pv, tv;
    for (const auto& p : preds) pv.push_back(tape.constant(p));
    for (const auto& t : targets) tv.push_back(tape.constant(t));
    return tape.value(total_loss_node(pv, tv, lambda, reduction).total)[0];
}

// ---- optimizer --------------------------------------------------------------------

AdamState AdamState::init(const ParamList& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
        s.m.push_back(Tensor::zeros_like(*p.tensor));
        s.v.push_back(Tensor::zeros_like(*p.tensor));
    }
    return s;
}

void adam_step(const ParamList& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw ContractError("adam_step: parameter/gradient/state size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        const Tensor& g = grads[i];
        if (g.size() != p.size())
            throw ContractError("adam_step: gradient shape mismatch for " + params[i].name);
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            p[j] -= lr * mh / (std::sqrt(vh) + state.eps);
        }
    }
}

// ---- validation ----------------------------------------------------------------

namespace {

// Teacher hidden layers at the target indices for one utterance.
std::vector<Tensor> teacher_targets(const TeacherModel& teacher, const Tensor& wave,
                                    const std::vector<std::size_t>& target_layers) {
    LayerStack stack = teacher.forward(wave);
    std::vector<Tensor> out;
    out.reserve(target_layers.size());
    for (std::size_t t : target_layers) out.push_back(stack.hidden[t - 1]);
    return out;
}

ValMetrics validate_cached(const StudentModel& student, const Dataset& data,
                           const std::vector<std::vector<Tensor>>& targets,
                           const DistillConfig& cfg) {
    const std::size_t n = cfg.target_layers.size();
    ValMetrics m;
    m.per_layer_l1.assign(n, 0.0);
    m.per_layer_cos.assign(n, 0.0);
    if (data.size() == 0) throw ContractError("validate: empty dataset");
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tape tape;
        StudentModel::Bound b = student.bind(tape, false);
        Var f = b.extract_features(tape.constant(data.wave(i)));
        std::vector<Var> preds = b.predictions(f, n);
        std::vector<Var> tv;
        tv.reserve(n);
        for (const Tensor& tt : targets[i]) tv.push_back(tape.constant(tt));
        double item_total = 0.0;
        for (std::size_t l = 0; l < n; ++l) {
            LossParts p = layer_loss_node(preds[l], tv[l], cfg.lambda, cfg.reduction);
            const double l1 = tape.value(p.l1)[0];
            const double cs = tape.value(p.cos)[0];
            m.per_layer_l1[l] += l1;
            m.per_layer_cos[l] += cs;
            item_total += l1 + cs;
        }
        if (cfg.reduction == LossReduction::MeanTAndL) item_total /= static_cast<double>(n);
        m.total += item_total;
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    m.total *= inv;
    for (std::size_t l = 0; l < n; ++l) {
        m.per_layer_l1[l] *= inv;
        m.per_layer_cos[l] *= inv;
    }
    return m;
}

}  // namespace

ValMetrics validate(const StudentModel& student, const TeacherModel& teacher, const Dataset& data,
                    const DistillConfig& cfg) {
    cfg.validate(teacher.config().layers);
    std::vector<std::vector<Tensor>> targets;
    targets.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        targets.push_back(teacher_targets(teacher, data.wave(i), cfg.target_layers));
    return validate_cached(student, data, targets, cfg);
}

// ---- training -----------------------------------------------------------------------

TrainResult train(StudentModel& student, const TeacherModel& teacher, const Dataset& train_data,
                  const Dataset& val_data, const DistillConfig& cfg, std::ostream* progress) {
    cfg.validate(teacher.config().layers);
    if (train_data.size() == 0) throw ContractError("train: empty training dataset");
    const std::size_t n = cfg.target_layers.size();
    student.set_trained_targets(n);

    ParamList params = student.parameters();
    AdamState adam = AdamState::init(params);

    // The teacher is frozen, so its targets per utterance are computed once.
    std::unordered_map<std::size_t, std::vector<Tensor>> target_cache;
    auto targets_for = [&](std::size_t idx) -> const std::vector<Tensor>& {
        auto it = target_cache.find(idx);
        if (it == target_cache.end())
            it = target_cache
                     .emplace(idx,
                              teacher_targets(teacher, train_data.wave(idx), cfg.target_layers))
                     .first;
        return it->second;
    };
    std::vector<std::vector<Tensor>> val_targets;
    val_targets.reserve(val_data.size());
    for (std::size_t i = 0; i < val_data.size(); ++i)
        val_targets.push_back(teacher_targets(teacher, val_data.wave(i), cfg.target_layers));

    TrainResult result;
    result.initial_val = validate_cached(student, val_data, val_targets, cfg).total;

    const Prng run_rng = Prng(cfg.seed).split("batch");
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        const double lr = lr_at(step, cfg);
        Prng batch_rng = run_rng.split(step);

        Tape tape;
        StudentModel::Bound bound = student.bind(tape, true);
        std::vector<std::size_t> batch;
        batch.reserve(cfg.batch_size);
        for (std::size_t j = 0; j < cfg.batch_size; ++j)
            batch.push_back(batch_rng.index(train_data.size()));

        std::optional<LossParts> acc;
        for (std::size_t idx : batch) {
            Var f = bound.extract_features(tape.constant(train_data.wave(idx)));
            std::vector<Var> preds = bound.predictions(f, n);
            std::vector<Var> tv;
            tv.reserve(n);
            for (const Tensor& tt : targets_for(idx)) tv.push_back(tape.constant(tt));
            LossParts p = total_loss_node(preds, tv, cfg.lambda, cfg.reduction);
            if (!acc) {
                acc = p;
            } else {
                acc->total = acc->total + p.total;
                acc->l1 = acc->l1 + p.l1;
                acc->cos = acc->cos + p.cos;
            }
        }
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        Var loss = scale(acc->total, inv_b);
        const double loss_v = tape.value(loss)[0];
        const double l1_v = tape.value(acc->l1)[0] * inv_b;
        const double cos_v = tape.value(acc->cos)[0] * inv_b;
        if (!std::isfinite(loss_v))
            throw Error("train: non-finite loss at step " + std::to_string(step) +
                        " (run seed " + std::to_string(cfg.seed) + ", batch stream " +
                        std::to_string(step) + ")");

        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            grads.push_back(tape.grad(bound.order[i].second));
        adam_step(params, grads, adam, lr);

        TraceRow row{step, lr, loss_v, l1_v, cos_v, std::nullopt};
        if (step == 0) {
            row.val = result.initial_val;
        } else if (step % cfg.val_every == 0) {
            row.val = validate_cached(student, val_data, val_targets, cfg).total;
        }
        if (step + 1 == cfg.total_steps) {
            result.final_val = validate_cached(student, val_data, val_targets, cfg).total;
            if (step != 0) row.val = result.final_val;
        }
        result.trace.push_back(row);
        if (progress && (step % 100 == 0 || step + 1 == cfg.total_steps)) {
            *progress << "step " << step << " lr " << lr << " loss " << loss_v;
            if (row.val) *progress << " val " << *row.val;
            *progress << "\n";
        }
    }
    return result;
}

void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& out) {
    out << "step,lr,total_loss,l1_term,cos_term,val_total\n";
    char buf[512];
    for (const auto& r : trace) {
        if (r.val) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", r.step, r.lr,
                          r.total, r.l1, r.cos, *r.val);
        } else {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,", r.step, r.lr, r.total,
                          r.l1, r.cos);
        }
        out << buf << "\n";
    }
}

}  // namespace layergen
