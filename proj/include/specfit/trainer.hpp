#pragma once

// The optimization loop: AdamW or plain SGD over the model's trainable set,
// freeze-schedule hooks, opt-in per-step update logging (the raw material for
// the freeze-ledger identity), and bit-exact checkpoint/resume.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "specfit/avf.hpp"
#include "specfit/checkpoint.hpp"
#include "specfit/dataset.hpp"
#include "specfit/model.hpp"

namespace specfit {

enum class OptimKind : std::uint8_t { adamw, sgd };

inline const char* optim_name(OptimKind o) { return o == OptimKind::adamw ? "adamw" : "sgd"; }

inline OptimKind optim_from_name(const std::string& s) {
    if (s == "adamw") return OptimKind::adamw;
    if (s == "sgd") return OptimKind::sgd;
    throw ValidationError("unknown optimizer '" + s + "'");
}

enum class TrainMode : std::uint8_t {
    spectral,      // factored layers, trainable set chosen by the variant
    full_ft,       // every dense parameter
    bias_only,     // linear biases only
    lora,          // low-rank adapters on the tagged linears
    l1,            // spectral full set, no freezing, L1 penalty on sigma
    random_freeze, // spectral full set, random freeze selection
    sigma_dropout, // spectral full set, dropout on sigma in train mode
};

inline const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::spectral: return "spectral";
        case TrainMode::full_ft: return "full_ft";
        case TrainMode::bias_only: return "bias_only";
        case TrainMode::lora: return "lora";
        case TrainMode::l1: return "l1";
        case TrainMode::random_freeze: return "random_freeze";
        case TrainMode::sigma_dropout: return "sigma_dropout";
    }
    return "?";
}

inline TrainMode train_mode_from_name(const std::string& s) {
    for (TrainMode m : {TrainMode::spectral, TrainMode::full_ft, TrainMode::bias_only,
                        TrainMode::lora, TrainMode::l1, TrainMode::random_freeze,
                        TrainMode::sigma_dropout})
        if (s == train_mode_name(m)) return m;
    throw ValidationError("unknown training mode '" + s + "'");
}

// True for the modes whose trainable set comes from spectralize().
inline bool mode_is_spectral(TrainMode m) {
    return m == TrainMode::spectral || m == TrainMode::l1 || m == TrainMode::random_freeze ||
           m == TrainMode::sigma_dropout;
}

inline bool mode_uses_freeze_schedule(TrainMode m, Variant v) {
    return (m == TrainMode::spectral && variant_uses_avf(v)) || m == TrainMode::random_freeze;
}

struct TrainConfig {
    TrainMode mode = TrainMode::spectral;
    Variant variant = Variant::full_avf;
    OptimKind optimizer = OptimKind::adamw;
    double lr = 1e-3;
    std::int64_t batch = 32;
    std::int64_t max_steps = 0;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t warmup = 0;
    AvfConfig avf;
    double l1_lambda = 0.0;
    double dropout_p = 0.0;
    std::int64_t lora_r = 2;
    double lora_alpha = 4.0;
    bool grad_log = false;
    std::string config_echo; // stored verbatim into checkpoints

    bool operator==(const TrainConfig&) const = default;

    void validate() const {
        if (!(lr >= 0.0)) throw ValidationError("train: lr must be >= 0");
        if (batch < 1) throw ValidationError("train: batch must be >= 1");
        if (max_steps < 0) throw ValidationError("train: max_steps must be >= 0");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
            throw ValidationError("train: betas must lie in [0, 1)");
        if (!(eps > 0)) throw ValidationError("train: eps must be > 0");
        if (weight_decay < 0) throw ValidationError("train: weight decay must be >= 0");
        if (warmup < 0) throw ValidationError("train: warmup must be >= 0");
        avf.validate();
        if (avf.n_f > 0 && !mode_uses_freeze_schedule(mode, variant))
            throw ValidationError(std::string("train: an avf schedule is configured but mode '") +
                                  train_mode_name(mode) + "' never freezes");
        if (grad_log && optimizer != OptimKind::sgd)
            throw ValidationError("train: the update ledger (grad_log) requires the sgd optimizer");
        if (mode == TrainMode::l1 && l1_lambda < 0)
            throw ValidationError("train: l1_lambda must be >= 0");
        if (mode == TrainMode::sigma_dropout && !(dropout_p >= 0 && dropout_p < 1))
            throw ValidationError("train: dropout_p must lie in [0, 1)");
        if (mode == TrainMode::lora && lora_r < 1)
            throw ValidationError("train: lora rank must be >= 1");
    }
};

template <class Real>
struct StepLog {
    std::int64_t step;
    Real loss;
    double lr;
    std::int64_t frozen_count;
};

template <class Real>
struct RegistrySnapshot {
    std::int64_t step;
    struct Row {
        VectorId id;
        Real strength;
        Real ema;
        bool frozen;
    };
    std::vector<Row> rows;
};

// Per-vector stream of would-be updates (one entry per step) plus the frozen
// flag at that step and the accumulated update the optimizer actually applied.
template <class Real>
struct GradLogVec {
    VectorId id;
    std::vector<std::vector<Real>> updates;
    std::vector<unsigned char> frozen;
    std::vector<Real> applied_acc;
};

template <class Real>
struct GradLog {
    std::vector<std::int64_t> steps;
    std::vector<GradLogVec<Real>> vecs;
};

template <class Real>
struct EvalResult {
    Real loss = std::numeric_limits<Real>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
};

template <class Real>
struct Task {
    std::function<Tensor<Real>(Model<Real>&, Rng&, const FwdCtx<Real>&)> sample_loss;
    std::function<EvalResult<Real>(Model<Real>&)> evaluate; // may be empty
    std::int64_t steps_per_epoch = 1;
};

template <class Real>
struct TrainResult {
    std::vector<StepLog<Real>> steps;
    std::vector<RegistrySnapshot<Real>> registry_history;
    GradLog<Real> gradlog;
    bool gradlog_enabled = false;
    Checkpoint init_ckpt;
    Checkpoint final_ckpt;
    Real final_loss = std::numeric_limits<Real>::quiet_NaN();
    EvalResult<Real> final_eval;
    std::int64_t trainable_count = 0;
    std::int64_t total_params = 0;
};

template <class Real>
std::string tagged_prefix(const Model<Real>& m, const LayerId& id) {
    const char* base = m.spec.arch == Arch::mlp ? "mlp" : "blk";
    return base + std::to_string(id.layer) + "." + module_tag_name(id.module);
}

// ------------------------------------------------------------ checkpoints --

template <class Real>
struct TrainableParam {
    std::string name;
    Tensor<Real> tensor;
    VectorRecord<Real>* record = nullptr;
    std::vector<Real> m, v; // adam moments
};

template <class Real>
std::vector<TrainableParam<Real>> collect_trainables(Model<Real>& model,
                                                     VectorRegistry<Real>& reg) {
    std::unordered_map<const void*, VectorRecord<Real>*> by_node;
    for (auto& r : reg.records) by_node[r.param.node().get()] = &r;
    std::vector<TrainableParam<Real>> out;
    for (auto& np : model.named_params()) {
        if (!np.tensor.requires_grad()) continue;
        TrainableParam<Real> tp;
        tp.name = np.name;
        tp.tensor = np.tensor;
        auto it = by_node.find(np.tensor.node().get());
        tp.record = it == by_node.end() ? nullptr : it->second;
        tp.m.assign(np.tensor.data().size(), Real(0));
        tp.v.assign(np.tensor.data().size(), Real(0));
        out.push_back(std::move(tp));
    }
    return out;
}

template <class Real>
Checkpoint make_run_checkpoint(Model<Real>& model, const VectorRegistry<Real>& reg,
                               const std::vector<TrainableParam<Real>>& trainables,
                               std::int64_t step, const TrainConfig& cfg, const Rng& rng) {
    Checkpoint ck;
    ck.put_text("config", cfg.config_echo);
    ck.put_scalar_i64("step", step);
    ck.put_text("rng", rng.serialize());
    for (auto& np : model.named_params())
        ckpt_put_real<Real>(ck, "param." + np.name, np.tensor.shape(), np.tensor.data());
    for (auto* l : model.tagged_linears()) {
        if (!l->spec) continue;
        const std::string p = "snap." + tagged_prefix(model, l->id);
        ckpt_put_real<Real>(ck, p + ".sigma0", {l->spec->rank},
                            std::span<const Real>(l->spec->sigma0.data(), l->spec->sigma0.size()));
        ckpt_put_real<Real>(ck, p + ".bias0", {l->spec->d_out},
                            std::span<const Real>(l->spec->bias0.data(), l->spec->bias0.size()));
    }
    if (!reg.empty()) {
        const std::int64_t n = static_cast<std::int64_t>(reg.size());
        std::vector<std::int64_t> layer(reg.size());
        std::vector<unsigned char> module(reg.size()), kind(reg.size()), frozen(reg.size());
        std::vector<Real> strength(reg.size()), ema(reg.size());
        for (std::size_t i = 0; i < reg.size(); ++i) {
            const auto& r = reg.records[i];
            layer[i] = r.id.layer;
            module[i] = static_cast<unsigned char>(r.id.module);
            kind[i] = static_cast<unsigned char>(r.id.kind);
            frozen[i] = r.frozen ? 1 : 0;
            strength[i] = r.strength;
            ema[i] = r.ema;
        }
        ck.put_i64("registry.layer", {n}, layer);
        ck.put_u8("registry.module", {n}, module);
        ck.put_u8("registry.kind", {n}, kind);
        ckpt_put_real<Real>(ck, "registry.S", {n}, strength);
        ckpt_put_real<Real>(ck, "registry.ema", {n}, ema);
        ck.put_u8("registry.frozen", {n}, frozen);
    }
    if (cfg.optimizer == OptimKind::adamw) {
        for (const auto& tp : trainables) {
            ckpt_put_real<Real>(ck, "adam.m." + tp.name,
                                {static_cast<std::int64_t>(tp.m.size())}, tp.m);
            ckpt_put_real<Real>(ck, "adam.v." + tp.name,
                                {static_cast<std::int64_t>(tp.v.size())}, tp.v);
        }
    }
    return ck;
}

// Loads every named parameter (and the factored-layer snapshots) from a
// checkpoint into an already-structured model.
template <class Real>
void load_model_state(Model<Real>& model, const Checkpoint& ck) {
    for (auto& np : model.named_params()) {
        const Shape& shape = np.tensor.shape();
        auto src = ckpt_get_real<Real>(ck, "param." + np.name, &shape);
        std::copy(src.begin(), src.end(), np.tensor.data().begin());
    }
    for (auto* l : model.tagged_linears()) {
        if (!l->spec) continue;
        const std::string p = "snap." + tagged_prefix(model, l->id);
        const Shape s_shape = {l->spec->rank};
        auto s0 = ckpt_get_real<Real>(ck, p + ".sigma0", &s_shape);
        l->spec->sigma0.assign(s0.begin(), s0.end());
        const Shape b_shape = {l->spec->d_out};
        auto b0 = ckpt_get_real<Real>(ck, p + ".bias0", &b_shape);
        l->spec->bias0.assign(b0.begin(), b0.end());
    }
}

template <class Real>
void restore_run_state(Model<Real>& model, VectorRegistry<Real>& reg,
                       std::vector<TrainableParam<Real>>& trainables, Rng& rng,
                       std::int64_t& start_step, const TrainConfig& cfg, const Checkpoint& ck) {
    load_model_state(model, ck);
    if (!reg.empty()) {
        const std::int64_t n = static_cast<std::int64_t>(reg.size());
        const Shape shape = {n};
        auto layer = ck.get_i64("registry.layer", &shape);
        auto module = ck.get_u8("registry.module");
        auto kind = ck.get_u8("registry.kind");
        auto strength = ckpt_get_real<Real>(ck, "registry.S", &shape);
        auto ema = ckpt_get_real<Real>(ck, "registry.ema", &shape);
        auto frozen = ck.get_u8("registry.frozen");
        for (std::size_t i = 0; i < reg.size(); ++i) {
            auto& r = reg.records[i];
            if (r.id.layer != layer[i] || static_cast<unsigned char>(r.id.module) != module[i] ||
                static_cast<unsigned char>(r.id.kind) != kind[i])
                throw IoError("checkpoint: registry entry " + std::to_string(i) +
                              " does not match the model's vector " + r.id.str());
            r.strength = strength[i];
            r.ema = ema[i];
            r.frozen = frozen[i] != 0;
        }
        // Snapshots were overwritten by load_model_state; realign v0.
        for (auto* l : model.tagged_linears()) {
            if (!l->spec) continue;
            if (auto* rs = reg.find({l->id.layer, l->id.module, VecKind::sigma}))
                rs->v0 = l->spec->sigma0;
            if (auto* rb = reg.find({l->id.layer, l->id.module, VecKind::bias}))
                rb->v0 = l->spec->bias0;
        }
    }
    if (cfg.optimizer == OptimKind::adamw) {
        for (auto& tp : trainables) {
            const Shape shape = {static_cast<std::int64_t>(tp.m.size())};
            auto m = ckpt_get_real<Real>(ck, "adam.m." + tp.name, &shape);
            auto v = ckpt_get_real<Real>(ck, "adam.v." + tp.name, &shape);
            tp.m.assign(m.begin(), m.end());
            tp.v.assign(v.begin(), v.end());
        }
    }
    rng.restore(ck.get_text("rng"));
    start_step = ck.get_scalar_i64("step");
}

// ------------------------------------------------------------------ train --

template <class Real>
TrainResult<Real> train(Model<Real>& model, VectorRegistry<Real>& reg, const Task<Real>& task,
                        const TrainConfig& cfg, const Checkpoint* resume = nullptr) {
    cfg.validate();
    if (mode_is_spectral(cfg.mode) && !model.spectralized)
        throw ContractError("train: spectral modes need a spectralized model");

    auto trainables = collect_trainables(model, reg);
    const bool schedule = mode_uses_freeze_schedule(cfg.mode, cfg.variant);

    Rng rng(cfg.seed);
    std::int64_t start_step = 0;
    if (resume) restore_run_state(model, reg, trainables, rng, start_step, cfg, *resume);

    TrainResult<Real> out;
    out.trainable_count = count_trainable(model);
    out.total_params = total_params_dense(model);
    out.gradlog_enabled = cfg.grad_log && !reg.empty();
    if (out.gradlog_enabled) {
        for (auto& r : reg.records) {
            GradLogVec<Real> gl;
            gl.id = r.id;
            gl.applied_acc.assign(r.v0.size(), Real(0));
            out.gradlog.vecs.push_back(std::move(gl));
        }
    }
    out.init_ckpt = make_run_checkpoint(model, reg, trainables, start_step, cfg, rng);

    auto snapshot = [&](std::int64_t step) {
        RegistrySnapshot<Real> snap;
        snap.step = step;
        for (const auto& r : reg.records)
            snap.rows.push_back({r.id, r.strength, r.ema, r.frozen});
        out.registry_history.push_back(std::move(snap));
    };

    for (std::int64_t t = start_step; t < cfg.max_steps; ++t) {
        if (schedule) {
            if (is_avf_step(t, cfg.avf)) {
                if (cfg.mode == TrainMode::random_freeze)
                    random_freeze_step(reg, cfg.avf.k, rng, cfg.avf.beta);
                else
                    avf_step(reg, cfg.avf);
                snapshot(t);
            } else if (is_release_step(t, cfg.avf)) {
                for (auto& r : reg.records) r.frozen = false;
                snapshot(t);
            }
        }

        for (auto& tp : trainables) tp.tensor.zero_grad();

        FwdCtx<Real> ctx;
        ctx.train = true;
        ctx.rng = &rng;
        if (cfg.mode == TrainMode::sigma_dropout) ctx.sigma_dropout_p = static_cast<Real>(cfg.dropout_p);

        Tensor<Real> loss = task.sample_loss(model, rng, ctx);
        if (cfg.mode == TrainMode::l1)
            loss = add(loss, l1_penalty(reg, static_cast<Real>(cfg.l1_lambda)));
        const Real loss_val = loss.item();
        if (!std::isfinite(static_cast<double>(loss_val)))
            throw NumericalError("train: loss diverged (non-finite) at step " + std::to_string(t));
        loss.backward();

        const double lr_t =
            cfg.warmup > 0
                ? cfg.lr * std::min(1.0, static_cast<double>(t + 1) / static_cast<double>(cfg.warmup))
                : cfg.lr;
        const Real lr_r = static_cast<Real>(lr_t);

        for (auto& tp : trainables) {
            if (!tp.tensor.has_grad()) continue;
            auto g = tp.tensor.grad();
            for (Real x : g)
                if (!std::isfinite(static_cast<double>(x)))
                    throw NumericalError("train: non-finite gradient in '" + tp.name +
                                         "' at step " + std::to_string(t));
        }

        if (out.gradlog_enabled) {
            out.gradlog.steps.push_back(t);
            for (std::size_t i = 0; i < reg.records.size(); ++i) {
                auto& r = reg.records[i];
                auto& gl = out.gradlog.vecs[i];
                std::vector<Real> u(r.v0.size(), Real(0));
                if (r.param.has_grad()) {
                    auto g = r.param.grad();
                    for (std::size_t j = 0; j < u.size(); ++j) u[j] = -(lr_r * g[j]);
                }
                gl.frozen.push_back(r.frozen ? 1 : 0);
                if (!r.frozen)
                    for (std::size_t j = 0; j < u.size(); ++j) gl.applied_acc[j] += u[j];
                gl.updates.push_back(std::move(u));
            }
        }

        const auto& K = kern::active_kernels<Real>();
        for (auto& tp : trainables) {
            if (tp.record && tp.record->frozen) continue; // update exactly zero
            if (!tp.tensor.has_grad()) continue;
            auto g = tp.tensor.grad();
            auto p = tp.tensor.data();
            if (cfg.optimizer == OptimKind::adamw) {
                const Real bc1 = static_cast<Real>(1.0 - std::pow(cfg.beta1, double(t + 1)));
                const Real bc2 = static_cast<Real>(1.0 - std::pow(cfg.beta2, double(t + 1)));
                K.adamw_update(p.data(), g.data(), tp.m.data(), tp.v.data(), p.size(), lr_r,
                               static_cast<Real>(cfg.beta1), static_cast<Real>(cfg.beta2),
                               static_cast<Real>(cfg.eps), static_cast<Real>(cfg.weight_decay),
                               bc1, bc2);
            } else {
                K.sgd_update(p.data(), g.data(), p.size(), lr_r);
            }
        }

        out.steps.push_back({t, loss_val, lr_t, reg.frozen_count()});
        out.final_loss = loss_val;
    }

    // Final strengths for reporting; the EMA is only advanced at freeze steps.
    for (auto& r : reg.records) r.recompute_strength();
    snapshot(cfg.max_steps);

    out.final_ckpt = make_run_checkpoint(model, reg, trainables, cfg.max_steps, cfg, rng);
    if (task.evaluate) out.final_eval = task.evaluate(model);
    return out;
}

// ------------------------------------------------------------------- tasks --

template <class Real>
Task<Real> classification_task(std::shared_ptr<const ClassificationData> data, std::int64_t batch) {
    if (!data || data->size() == 0) throw ContractError("classification_task: empty dataset");
    Task<Real> t;
    t.steps_per_epoch = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(data->train_idx.size()) / std::max<std::int64_t>(1, batch));
    t.sample_loss = [data, batch](Model<Real>& m, Rng& rng, const FwdCtx<Real>& ctx) {
        const std::int64_t b =
            std::min<std::int64_t>(batch, static_cast<std::int64_t>(data->train_idx.size()));
        Tensor<Real> x = Tensor<Real>::zeros({b, data->dim});
        std::vector<std::int64_t> y(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i) {
            const std::int64_t pick = data->train_idx[static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(data->train_idx.size())))];
            for (std::int64_t j = 0; j < data->dim; ++j)
                x.at(i, j) = static_cast<Real>(data->x[static_cast<std::size_t>(pick * data->dim + j)]);
            y[static_cast<std::size_t>(i)] = data->y[static_cast<std::size_t>(pick)];
        }
        return softmax_cross_entropy(m.forward_classify(x, ctx), y);
    };
    t.evaluate = [data](Model<Real>& m) {
        NoGradGuard ng;
        const auto& idx = data->val_idx;
        const std::int64_t n = static_cast<std::int64_t>(idx.size());
        Tensor<Real> x = Tensor<Real>::zeros({n, data->dim});
        std::vector<std::int64_t> y(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < data->dim; ++j)
                x.at(i, j) =
                    static_cast<Real>(data->x[static_cast<std::size_t>(idx[i] * data->dim + j)]);
            y[static_cast<std::size_t>(i)] = data->y[static_cast<std::size_t>(idx[i])];
        }
        auto logits = m.forward_classify(x);
        EvalResult<Real> r;
        r.loss = softmax_cross_entropy(logits, y).item();
        auto pred = argmax_rows(logits);
        std::int64_t hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == y[i];
        r.accuracy = static_cast<double>(hit) / static_cast<double>(n);
        return r;
    };
    return t;
}

template <class Real>
Task<Real> char_lm_task(std::shared_ptr<const CharLmData> data, std::int64_t batch) {
    if (!data || data->tokens.empty()) throw ContractError("char_lm_task: empty corpus");
    const std::int64_t T = data->seq_len;
    Task<Real> t;
    t.steps_per_epoch = std::max<std::int64_t>(
        1, data->train_end / std::max<std::int64_t>(1, batch * T));
    t.sample_loss = [data, batch, T](Model<Real>& m, Rng& rng, const FwdCtx<Real>& ctx) {
        std::vector<std::vector<std::int64_t>> inputs, targets;
        const std::int64_t max_start = data->train_end - T - 1;
        for (std::int64_t b = 0; b < batch; ++b) {
            const std::int64_t o = rng.uniform_int(std::max<std::int64_t>(1, max_start + 1));
            inputs.emplace_back(data->tokens.begin() + o, data->tokens.begin() + o + T);
            targets.emplace_back(data->tokens.begin() + o + 1, data->tokens.begin() + o + 1 + T);
        }
        return m.lm_loss(inputs, targets, ctx);
    };
    t.evaluate = [data, T](Model<Real>& m) {
        NoGradGuard ng;
        // Held-out windows at stride T; falls back to the final window when
        // the validation region is shorter than one sequence.
        std::vector<std::int64_t> starts;
        const std::int64_t last_start =
            static_cast<std::int64_t>(data->tokens.size()) - T - 1;
        for (std::int64_t o = data->train_end; o <= last_start; o += T) starts.push_back(o);
        if (starts.empty()) starts.push_back(std::max<std::int64_t>(0, last_start));
        double loss_acc = 0;
        std::int64_t hit = 0, total = 0;
        for (std::int64_t o : starts) {
            std::vector<std::int64_t> input(data->tokens.begin() + o, data->tokens.begin() + o + T);
            std::vector<std::int64_t> target(data->tokens.begin() + o + 1,
                                             data->tokens.begin() + o + 1 + T);
            auto logits = m.lm_logits(input);
            loss_acc += static_cast<double>(softmax_cross_entropy(logits, target).item());
            auto pred = argmax_rows(logits);
            for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == target[i];
            total += T;
        }
        EvalResult<Real> r;
        r.loss = static_cast<Real>(loss_acc / static_cast<double>(starts.size()));
        r.accuracy = static_cast<double>(hit) / static_cast<double>(total);
        return r;
    };
    return t;
}

} // namespace specfit
