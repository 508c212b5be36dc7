#pragma once

// Toy architectures whose weight matrices carry the module taxonomy used by
// the freezing machinery: an MLP classifier (hidden layers tagged f1/f2) and
// a small transformer encoder with per-block q/k/v/o/f1/f2 linears. Both can
// be switched between dense training, spectral fine-tuning, bias-only and
// LoRA modes.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "specfit/avf.hpp"
#include "specfit/ops.hpp"
#include "specfit/rng.hpp"
#include "specfit/spectral.hpp"

namespace specfit {

enum class Arch : std::uint8_t { mlp, transformer };

inline const char* arch_name(Arch a) { return a == Arch::mlp ? "mlp" : "transformer"; }

inline Arch arch_from_name(const std::string& s) {
    if (s == "mlp") return Arch::mlp;
    if (s == "transformer") return Arch::transformer;
    throw ValidationError("unknown architecture '" + s + "'");
}

struct ModelSpec {
    Arch arch = Arch::mlp;
    std::int64_t depth = 2;   // hidden layers (mlp) or blocks (transformer)
    std::int64_t hidden = 64; // model width
    std::int64_t heads = 4;   // attention heads
    std::int64_t classes = 2; // classifier classes or vocabulary size
    std::int64_t input_dim = 2; // mlp feature count
    std::int64_t ffn = 0;       // transformer FFN width, 0 means 4*hidden
    std::int64_t max_seq = 64;  // positional table length
    std::uint64_t seed = 1;

    std::int64_t ffn_dim() const { return ffn > 0 ? ffn : 4 * hidden; }

    void validate() const {
        if (depth < 1 || hidden < 1 || classes < 1 || input_dim < 1 || max_seq < 1)
            throw ValidationError("model spec: all dimensions must be >= 1");
        if (arch == Arch::transformer) {
            if (heads < 1) throw ValidationError("model spec: heads must be >= 1");
            if (hidden % heads != 0)
                throw ValidationError("model spec: hidden dim " + std::to_string(hidden) +
                                      " not divisible by heads " + std::to_string(heads));
        }
    }

    bool operator==(const ModelSpec&) const = default;
};

// The five trainable-set variants of the spectral fine-tuning ablation.
enum class Variant : std::uint8_t {
    sigma_a,        // sigma of q,k,v,o
    sigma,          // sigma of q,k,v,o,f1,f2
    sigma_a_plus_b, // sigma of q,k,v,o plus every bias
    full_no_avf,    // sigma of all six plus every bias, freezing disabled
    full_avf,       // same set with adaptive freezing enabled
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::sigma_a: return "sigma_a";
        case Variant::sigma: return "sigma";
        case Variant::sigma_a_plus_b: return "sigma_a_plus_b";
        case Variant::full_no_avf: return "full_no_avf";
        case Variant::full_avf: return "full_avf";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    for (Variant v : {Variant::sigma_a, Variant::sigma, Variant::sigma_a_plus_b,
                      Variant::full_no_avf, Variant::full_avf})
        if (s == variant_name(v)) return v;
    throw ValidationError("unknown variant '" + s + "'");
}

inline bool variant_trains_sigma_tag(Variant v, ModuleTag tag) {
    const bool attention = tag == ModuleTag::q || tag == ModuleTag::k || tag == ModuleTag::v ||
                           tag == ModuleTag::o;
    const bool ffn = tag == ModuleTag::f1 || tag == ModuleTag::f2;
    switch (v) {
        case Variant::sigma_a:
        case Variant::sigma_a_plus_b: return attention;
        case Variant::sigma:
        case Variant::full_no_avf:
        case Variant::full_avf: return attention || ffn;
    }
    return false;
}

inline bool variant_trains_bias(Variant v) {
    return v == Variant::sigma_a_plus_b || v == Variant::full_no_avf || v == Variant::full_avf;
}

inline bool variant_uses_avf(Variant v) { return v == Variant::full_avf; }

template <class Real>
struct LoraAdapter {
    Tensor<Real> a; // d_in x r, gaussian
    Tensor<Real> b; // r x d_out, zero so the initial forward is exact
    Real scale = 1; // alpha / r
    std::int64_t r = 0;
};

// One linear map, input-major storage (forward is x * W). Exactly one of the
// dense form, the spectral replacement, or dense-plus-LoRA is active.
template <class Real>
struct Linear {
    LayerId id;
    Tensor<Real> w; // d_in x d_out
    Tensor<Real> b; // d_out
    std::optional<SpectralLinear<Real>> spec;
    std::optional<LoraAdapter<Real>> lora;

    std::int64_t d_in() const { return spec ? spec->d_in : w.rows(); }
    std::int64_t d_out() const { return spec ? spec->d_out : w.cols(); }

    Tensor<Real> forward(const Tensor<Real>& x, const FwdCtx<Real>& ctx = {}) const {
        if (spec) return spec->forward(x, ctx);
        Tensor<Real> y = add_rowvec(matmul(x, w), b);
        if (lora) {
            Tensor<Real> delta = matmul(matmul(x, lora->a), lora->b);
            y = add(y, mul_scalar(delta, lora->scale));
        }
        return y;
    }
};

template <class Real>
struct LayerNormParams {
    Tensor<Real> gain;
    Tensor<Real> shift;
};

template <class Real>
struct Block {
    LayerNormParams<Real> ln1, ln2;
    Linear<Real> q, k, v, o, f1, f2;
};

template <class Real>
struct NamedParam {
    std::string name;
    Tensor<Real> tensor;
};

template <class Real>
struct Model {
    ModelSpec spec;
    bool spectralized = false;

    // transformer parts
    Tensor<Real> tok_emb; // vocab x hidden
    Tensor<Real> pos_emb; // max_seq x hidden
    std::vector<Block<Real>> blocks;
    LayerNormParams<Real> ln_f;
    // mlp parts
    std::vector<Linear<Real>> mlp_layers;
    // shared classifier head
    Linear<Real> head;

    // Tagged linears in traversal order; the set the fine-tuning methods act on.
    std::vector<Linear<Real>*> tagged_linears() {
        std::vector<Linear<Real>*> out;
        if (spec.arch == Arch::mlp) {
            for (auto& l : mlp_layers) out.push_back(&l);
        } else {
            for (auto& blk : blocks)
                for (auto* l : {&blk.q, &blk.k, &blk.v, &blk.o, &blk.f1, &blk.f2})
                    out.push_back(l);
        }
        return out;
    }

    std::vector<NamedParam<Real>> named_params() {
        std::vector<NamedParam<Real>> out;
        auto add_linear = [&out](const std::string& prefix, Linear<Real>& l) {
            if (l.spec) {
                out.push_back({prefix + ".U", l.spec->U});
                out.push_back({prefix + ".V", l.spec->V});
                out.push_back({prefix + ".Ut", l.spec->Ut});
                out.push_back({prefix + ".sigma", l.spec->sigma});
                out.push_back({prefix + ".bias", l.spec->bias});
            } else {
                out.push_back({prefix + ".W", l.w});
                out.push_back({prefix + ".b", l.b});
                if (l.lora) {
                    out.push_back({prefix + ".lora_a", l.lora->a});
                    out.push_back({prefix + ".lora_b", l.lora->b});
                }
            }
        };
        if (spec.arch == Arch::mlp) {
            for (std::size_t i = 0; i < mlp_layers.size(); ++i)
                add_linear("mlp" + std::to_string(i) + "." +
                               module_tag_name(mlp_layers[i].id.module),
                           mlp_layers[i]);
        } else {
            out.push_back({"tok_emb", tok_emb});
            out.push_back({"pos_emb", pos_emb});
            for (std::size_t i = 0; i < blocks.size(); ++i) {
                const std::string p = "blk" + std::to_string(i);
                out.push_back({p + ".ln1.g", blocks[i].ln1.gain});
                out.push_back({p + ".ln1.b", blocks[i].ln1.shift});
                add_linear(p + ".q", blocks[i].q);
                add_linear(p + ".k", blocks[i].k);
                add_linear(p + ".v", blocks[i].v);
                add_linear(p + ".o", blocks[i].o);
                out.push_back({p + ".ln2.g", blocks[i].ln2.gain});
                out.push_back({p + ".ln2.b", blocks[i].ln2.shift});
                add_linear(p + ".f1", blocks[i].f1);
                add_linear(p + ".f2", blocks[i].f2);
            }
            out.push_back({"ln_f.g", ln_f.gain});
            out.push_back({"ln_f.b", ln_f.shift});
        }
        add_linear("head", head);
        return out;
    }

    // Classifier forward for the MLP architecture.
    Tensor<Real> forward_classify(const Tensor<Real>& x, const FwdCtx<Real>& ctx = {}) {
        if (spec.arch != Arch::mlp)
            throw ContractError("forward_classify is only defined for the mlp architecture");
        Tensor<Real> h = x;
        for (auto& l : mlp_layers) h = gelu(l.forward(h, ctx));
        return head.forward(h, ctx);
    }

    // Next-token logits for one sequence; causal masking optional.
    Tensor<Real> lm_logits(const std::vector<std::int64_t>& ids, bool causal = true,
                           const FwdCtx<Real>& ctx = {}) {
        if (spec.arch != Arch::transformer)
            throw ContractError("lm_logits is only defined for the transformer architecture");
        const std::int64_t t = static_cast<std::int64_t>(ids.size());
        if (t < 1 || t > spec.max_seq)
            throw ValidationError("lm_logits: sequence length " + std::to_string(t) +
                                  " outside [1, " + std::to_string(spec.max_seq) + "]");
        std::vector<std::int64_t> positions(ids.size());
        for (std::size_t i = 0; i < positions.size(); ++i)
            positions[i] = static_cast<std::int64_t>(i);
        Tensor<Real> h = add(embedding(tok_emb, ids), embedding(pos_emb, positions));

        Tensor<Real> mask;
        if (causal) {
            mask = Tensor<Real>::zeros({t, t});
            for (std::int64_t i = 0; i < t; ++i)
                for (std::int64_t j = i + 1; j < t; ++j)
                    mask.at(i, j) = Real(-1e9);
        }

        const std::int64_t dh = spec.hidden / spec.heads;
        const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
        for (auto& blk : blocks) {
            Tensor<Real> a1 = layer_norm(h, blk.ln1.gain, blk.ln1.shift);
            Tensor<Real> qm = blk.q.forward(a1, ctx);
            Tensor<Real> km = blk.k.forward(a1, ctx);
            Tensor<Real> vm = blk.v.forward(a1, ctx);
            std::vector<Tensor<Real>> heads_out;
            heads_out.reserve(static_cast<std::size_t>(spec.heads));
            for (std::int64_t hh = 0; hh < spec.heads; ++hh) {
                Tensor<Real> qh = slice_cols(qm, hh * dh, dh);
                Tensor<Real> kh = slice_cols(km, hh * dh, dh);
                Tensor<Real> vh = slice_cols(vm, hh * dh, dh);
                Tensor<Real> scores = mul_scalar(matmul(qh, transpose(kh)), inv_sqrt_dh);
                if (causal) scores = add(scores, mask);
                Tensor<Real> attn = softmax_rows(scores);
                heads_out.push_back(matmul(attn, vh));
            }
            Tensor<Real> att = blk.o.forward(concat_cols(heads_out), ctx);
            h = add(h, att);
            Tensor<Real> a2 = layer_norm(h, blk.ln2.gain, blk.ln2.shift);
            h = add(h, blk.f2.forward(gelu(blk.f1.forward(a2, ctx)), ctx));
        }
        h = layer_norm(h, ln_f.gain, ln_f.shift);
        return head.forward(h, ctx);
    }

    // Mean next-char loss over a batch of sequences.
    Tensor<Real> lm_loss(const std::vector<std::vector<std::int64_t>>& inputs,
                         const std::vector<std::vector<std::int64_t>>& targets,
                         const FwdCtx<Real>& ctx = {}) {
        if (inputs.empty() || inputs.size() != targets.size())
            throw ContractError("lm_loss: mismatched batch");
        Tensor<Real> acc;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
            Tensor<Real> loss = softmax_cross_entropy(lm_logits(inputs[b], true, ctx), targets[b]);
            acc = (b == 0) ? loss : add(acc, loss);
        }
        return mul_scalar(acc, Real(1) / static_cast<Real>(inputs.size()));
    }
};

namespace detail {

template <class Real>
Linear<Real> make_linear(std::int64_t d_in, std::int64_t d_out, LayerId id, Rng& rng) {
    Linear<Real> l;
    l.id = id;
    l.w = Tensor<Real>::zeros({d_in, d_out});
    rng.fill_normal(l.w.data().data(), l.w.data().size(), 1.0 / std::sqrt(static_cast<double>(d_in)));
    l.b = Tensor<Real>::zeros({d_out});
    return l;
}

template <class Real>
LayerNormParams<Real> make_ln(std::int64_t n) {
    return {Tensor<Real>::full({n}, Real(1)), Tensor<Real>::zeros({n})};
}

} // namespace detail

// Seeded construction; identical spec gives bit-identical parameters.
template <class Real>
Model<Real> build_model(const ModelSpec& ms) {
    ms.validate();
    Rng rng(ms.seed);
    Model<Real> m;
    m.spec = ms;
    if (ms.arch == Arch::mlp) {
        std::int64_t d = ms.input_dim;
        for (std::int64_t i = 0; i < ms.depth; ++i) {
            const ModuleTag tag = (i % 2 == 0) ? ModuleTag::f1 : ModuleTag::f2;
            m.mlp_layers.push_back(detail::make_linear<Real>(d, ms.hidden, {i, tag}, rng));
            d = ms.hidden;
        }
        m.head = detail::make_linear<Real>(d, ms.classes, {ms.depth, ModuleTag::other}, rng);
    } else {
        m.tok_emb = Tensor<Real>::zeros({ms.classes, ms.hidden});
        rng.fill_normal(m.tok_emb.data().data(), m.tok_emb.data().size(), 0.05);
        m.pos_emb = Tensor<Real>::zeros({ms.max_seq, ms.hidden});
        rng.fill_normal(m.pos_emb.data().data(), m.pos_emb.data().size(), 0.05);
        for (std::int64_t i = 0; i < ms.depth; ++i) {
            Block<Real> blk;
            blk.ln1 = detail::make_ln<Real>(ms.hidden);
            blk.q = detail::make_linear<Real>(ms.hidden, ms.hidden, {i, ModuleTag::q}, rng);
            blk.k = detail::make_linear<Real>(ms.hidden, ms.hidden, {i, ModuleTag::k}, rng);
            blk.v = detail::make_linear<Real>(ms.hidden, ms.hidden, {i, ModuleTag::v}, rng);
            blk.o = detail::make_linear<Real>(ms.hidden, ms.hidden, {i, ModuleTag::o}, rng);
            blk.ln2 = detail::make_ln<Real>(ms.hidden);
            blk.f1 = detail::make_linear<Real>(ms.hidden, ms.ffn_dim(), {i, ModuleTag::f1}, rng);
            blk.f2 = detail::make_linear<Real>(ms.ffn_dim(), ms.hidden, {i, ModuleTag::f2}, rng);
            m.blocks.push_back(std::move(blk));
        }
        m.ln_f = detail::make_ln<Real>(ms.hidden);
        m.head = detail::make_linear<Real>(ms.hidden, ms.classes, {ms.depth, ModuleTag::other}, rng);
    }
    for (auto& np : m.named_params()) np.tensor.set_requires_grad(false);
    return m;
}

// Replaces every tagged matrix with its factored form and marks exactly the
// variant's vector set trainable. Everything else stays frozen. Returns the
// registry of trainable vectors in traversal (lexicographic id) order.
template <class Real>
VectorRegistry<Real> spectralize(Model<Real>& model, Variant variant) {
    if (model.spectralized) throw ContractError("spectralize: model is already spectralized");
    for (auto& np : model.named_params()) np.tensor.set_requires_grad(false);
    VectorRegistry<Real> reg;
    for (Linear<Real>* l : model.tagged_linears()) {
        l->spec = SpectralLinear<Real>::decompose(l->w, &l->b, l->id);
        l->w = Tensor<Real>();
        l->b = Tensor<Real>();
        const bool train_sigma = variant_trains_sigma_tag(variant, l->id.module);
        const bool train_bias = variant_trains_bias(variant);
        if (train_sigma) {
            l->spec->sigma.set_requires_grad(true);
            VectorRecord<Real> rec;
            rec.id = {l->id.layer, l->id.module, VecKind::sigma};
            rec.v0 = l->spec->sigma0;
            rec.param = l->spec->sigma;
            reg.records.push_back(std::move(rec));
        }
        if (train_bias) {
            l->spec->bias.set_requires_grad(true);
            VectorRecord<Real> rec;
            rec.id = {l->id.layer, l->id.module, VecKind::bias};
            rec.v0 = l->spec->bias0;
            rec.param = l->spec->bias;
            reg.records.push_back(std::move(rec));
        }
    }
    model.spectralized = true;
    return reg;
}

// Low-rank adapters on the tagged linears: a zero-initialized up-projection
// keeps the initial forward exact; only the adapter factors train.
template <class Real>
void attach_lora(Model<Real>& model, std::int64_t r, Real alpha) {
    if (model.spectralized) throw ContractError("attach_lora: model is spectralized");
    if (r < 1) throw ValidationError("attach_lora: rank must be >= 1");
    Rng rng(model.spec.seed + 0x10ad);
    for (auto& np : model.named_params()) np.tensor.set_requires_grad(false);
    for (Linear<Real>* l : model.tagged_linears()) {
        const std::int64_t rmax = std::min(l->d_in(), l->d_out());
        if (r > rmax)
            throw ValidationError("attach_lora: rank " + std::to_string(r) + " exceeds min dim " +
                                  std::to_string(rmax) + " of layer " +
                                  std::to_string(l->id.layer) + "." +
                                  module_tag_name(l->id.module));
        LoraAdapter<Real> ad;
        ad.r = r;
        ad.scale = alpha / static_cast<Real>(r);
        ad.a = Tensor<Real>::zeros({l->d_in(), r});
        rng.fill_normal(ad.a.data().data(), ad.a.data().size(), 0.02);
        ad.b = Tensor<Real>::zeros({r, l->d_out()});
        ad.a.set_requires_grad(true);
        ad.b.set_requires_grad(true);
        l->lora = std::move(ad);
    }
}

template <class Real>
void set_full_ft(Model<Real>& model) {
    if (model.spectralized) throw ContractError("set_full_ft: model is spectralized");
    for (auto& np : model.named_params()) np.tensor.set_requires_grad(true);
}

// Classic bias-only fine-tuning: every linear bias trains, nothing else.
template <class Real>
void set_bias_only(Model<Real>& model) {
    if (model.spectralized) throw ContractError("set_bias_only: model is spectralized");
    for (auto& np : model.named_params()) np.tensor.set_requires_grad(false);
    for (Linear<Real>* l : model.tagged_linears()) l->b.set_requires_grad(true);
    model.head.b.set_requires_grad(true);
}

template <class Real>
std::int64_t count_trainable(Model<Real>& model) {
    std::int64_t n = 0;
    for (auto& np : model.named_params())
        if (np.tensor.requires_grad()) n += np.tensor.numel();
    return n;
}

// Size of the dense-equivalent base model: factored layers count as their
// original dense weight plus bias, adapters do not count. The denominator for
// every reported trainable fraction.
template <class Real>
std::int64_t total_params_dense(Model<Real>& model) {
    std::int64_t n = 0;
    auto add_linear = [&n](Linear<Real>& l) { n += l.d_in() * l.d_out() + l.d_out(); };
    if (model.spec.arch == Arch::mlp) {
        for (auto& l : model.mlp_layers) add_linear(l);
    } else {
        n += model.tok_emb.numel() + model.pos_emb.numel();
        for (auto& blk : model.blocks) {
            n += blk.ln1.gain.numel() + blk.ln1.shift.numel();
            n += blk.ln2.gain.numel() + blk.ln2.shift.numel();
            for (auto* l : {&blk.q, &blk.k, &blk.v, &blk.o, &blk.f1, &blk.f2}) add_linear(*l);
        }
        n += model.ln_f.gain.numel() + model.ln_f.shift.numel();
    }
    add_linear(model.head);
    return n;
}

} // namespace specfit
