#pragma once

// The spectral linear layer: a dense map held in factored form with frozen
// singular directions and trainable singular values and bias. Forward never
// materializes the dense weight; merging back to dense is an explicit export.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "specfit/linalg.hpp"
#include "specfit/ops.hpp"
#include "specfit/rng.hpp"
#include "specfit/tensor.hpp"

namespace specfit {

enum class ModuleTag : std::uint8_t { q, k, v, o, f1, f2, other };
enum class VecKind : std::uint8_t { sigma, bias };

inline const char* module_tag_name(ModuleTag t) {
    switch (t) {
        case ModuleTag::q: return "q";
        case ModuleTag::k: return "k";
        case ModuleTag::v: return "v";
        case ModuleTag::o: return "o";
        case ModuleTag::f1: return "f1";
        case ModuleTag::f2: return "f2";
        case ModuleTag::other: return "other";
    }
    return "?";
}

inline ModuleTag module_tag_from_name(const std::string& s) {
    for (ModuleTag t : {ModuleTag::q, ModuleTag::k, ModuleTag::v, ModuleTag::o, ModuleTag::f1,
                        ModuleTag::f2, ModuleTag::other})
        if (s == module_tag_name(t)) return t;
    throw ValidationError("unknown module tag '" + s + "'");
}

inline const char* vec_kind_name(VecKind k) { return k == VecKind::sigma ? "sigma" : "bias"; }

struct LayerId {
    std::int64_t layer = 0;
    ModuleTag module = ModuleTag::other;

    auto operator<=>(const LayerId&) const = default;
};

// Identity of one trainable vector; the ordering (layer, module in
// q<k<v<o<f1<f2 order, sigma before bias) is the deterministic tie-break for
// freeze selection.
struct VectorId {
    std::int64_t layer = 0;
    ModuleTag module = ModuleTag::other;
    VecKind kind = VecKind::sigma;

    auto operator<=>(const VectorId&) const = default;

    std::string str() const {
        return "layer" + std::to_string(layer) + "." + module_tag_name(module) + "." +
               vec_kind_name(kind);
    }
};

// Per-forward context: training mode plus the optional singular-value dropout
// comparison mode.
template <class Real>
struct FwdCtx {
    bool train = false;
    Real sigma_dropout_p = Real(0);
    Rng* rng = nullptr;
};

template <class Real>
class SpectralLinear {
public:
    // Frozen factors; byte-identical across a whole fine-tuning run.
    Tensor<Real> U;  // d_out x r
    Tensor<Real> V;  // d_in x r
    Tensor<Real> Ut; // r x d_out, forward-ready copy of U^T
    // Trainable vectors (whether grad flows is decided by the variant).
    Tensor<Real> sigma; // r
    Tensor<Real> bias;  // d_out
    // Immutable post-decomposition snapshots.
    std::vector<Real> sigma0;
    std::vector<Real> bias0;
    LayerId id;
    std::int64_t d_in = 0, d_out = 0, rank = 0;

    // Factorizes a dense map. `w_io` is stored input-major ([d_in, d_out], the
    // layout the model's forward uses); a missing bias synthesizes a
    // trainable zero vector.
    static SpectralLinear decompose(const Tensor<Real>& w_io, const Tensor<Real>* b, LayerId id) {
        require_2d(w_io, "SpectralLinear::decompose");
        SpectralLinear out;
        out.id = id;
        out.d_in = w_io.rows();
        out.d_out = w_io.cols();
        NoGradGuard ng;
        SvdFactors<Real> f = svd_thin(transpose(w_io)); // factorize the d_out x d_in map
        out.rank = f.rank();
        out.U = std::move(f.U);
        out.V = std::move(f.V);
        out.Ut = transpose(out.U);
        out.sigma = Tensor<Real>::from({out.rank}, f.sigma);
        out.sigma0 = std::move(f.sigma);
        if (b) {
            if (b->numel() != out.d_out)
                throw DimensionError("SpectralLinear::decompose: bias " + shape_str(b->shape()) +
                                     " does not match output dim " + std::to_string(out.d_out));
            out.bias = b->clone_detached();
        } else {
            out.bias = Tensor<Real>::zeros({out.d_out});
        }
        out.bias0.assign(out.bias.data().begin(), out.bias.data().end());
        out.U.set_requires_grad(false);
        out.V.set_requires_grad(false);
        out.Ut.set_requires_grad(false);
        return out;
    }

    // y = x V diag(sigma) U^T + b: two thin matmuls and a column scale, cost
    // O(r (d_in + d_out)) per input row.
    Tensor<Real> forward(const Tensor<Real>& x, const FwdCtx<Real>& ctx = {}) const {
        if (x.cols() != d_in)
            throw DimensionError("SpectralLinear::forward: input " + shape_str(x.shape()) +
                                 " does not match d_in " + std::to_string(d_in));
        Tensor<Real> z = matmul(x, V);
        Tensor<Real> s = sigma;
        if (ctx.train && ctx.sigma_dropout_p > Real(0)) {
            if (!ctx.rng)
                throw ContractError("SpectralLinear::forward: sigma dropout needs an rng");
            s = dropout(sigma, ctx.sigma_dropout_p, *ctx.rng, true);
        }
        Tensor<Real> zs = mul_rowvec(z, s);
        Tensor<Real> y = matmul(zs, Ut);
        return add_rowvec(y, bias);
    }

    // Dense export: (W input-major, bias). Dense forward on the result equals
    // the factored forward to merge tolerance.
    std::pair<Tensor<Real>, Tensor<Real>> merge() const {
        NoGradGuard ng;
        std::vector<Real> s(sigma.data().begin(), sigma.data().end());
        Tensor<Real> svt = scale_rows(transpose(V), Tensor<Real>::from({rank}, s));
        Tensor<Real> w = matmul(U, svt); // d_out x d_in
        return {transpose(w), bias.clone_detached()};
    }

    // U diag(sigma - sigma0) V^T: the incremental dense update implied by the
    // trained singular values. The bias delta is reported by delta_bias().
    Tensor<Real> delta_star() const {
        NoGradGuard ng;
        std::vector<Real> ds(static_cast<std::size_t>(rank));
        for (std::int64_t i = 0; i < rank; ++i)
            ds[static_cast<std::size_t>(i)] = sigma.data()[i] - sigma0[static_cast<std::size_t>(i)];
        Tensor<Real> svt = scale_rows(transpose(V), Tensor<Real>::from({rank}, ds));
        return matmul(U, svt);
    }

    std::vector<Real> delta_bias() const {
        std::vector<Real> db(bias.data().size());
        for (std::size_t i = 0; i < db.size(); ++i) db[i] = bias.data()[i] - bias0[i];
        return db;
    }
};

} // namespace specfit
