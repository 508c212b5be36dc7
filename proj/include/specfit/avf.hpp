#pragma once

// Adaptive vector freezing: per-vector training-strength bookkeeping, an EMA
// ranking, and a periodic top-k freeze, plus the comparison mechanisms it is
// evaluated against (random freezing, an L1 penalty on singular values, and
// singular-value dropout).

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <vector>

#include "specfit/ops.hpp"
#include "specfit/rng.hpp"
#include "specfit/spectral.hpp"

namespace specfit {

// Freeze schedule: steps t_i + j*t_f for j in [0, n_f) are freeze steps, each
// freezing the k strongest vectors. After the final interval elapses
// (t >= t_i + n_f*t_f) every vector is released for the rest of training;
// that release is configurable.
struct AvfConfig {
    std::int64_t t_i = 0;  // first freeze step
    std::int64_t t_f = 1;  // period between freeze steps
    std::int64_t n_f = 0;  // number of freeze steps (0 disables)
    std::int64_t k = 0;    // vectors frozen per step
    double beta = 0.99;    // EMA constant
    bool release_after_last = true;

    bool operator==(const AvfConfig&) const = default;

    void validate() const {
        if (t_i < 0) throw ValidationError("avf: t_i must be >= 0");
        if (t_f < 1) throw ValidationError("avf: t_f must be >= 1");
        if (n_f < 0) throw ValidationError("avf: n_f must be >= 0");
        if (k < 0) throw ValidationError("avf: k must be >= 0");
        if (!(beta >= 0.0 && beta < 1.0)) throw ValidationError("avf: beta must lie in [0, 1)");
    }
};

inline bool is_avf_step(std::int64_t t, const AvfConfig& cfg) {
    if (cfg.n_f <= 0 || t < cfg.t_i) return false;
    const std::int64_t d = t - cfg.t_i;
    return d % cfg.t_f == 0 && d / cfg.t_f < cfg.n_f;
}

inline bool is_release_step(std::int64_t t, const AvfConfig& cfg) {
    return cfg.release_after_last && cfg.n_f > 0 && t == cfg.t_i + cfg.n_f * cfg.t_f;
}

// Mean absolute drift of a vector from its snapshot.
template <class Real>
Real training_strength(std::span<const Real> v0, std::span<const Real> vt) {
    if (v0.size() != vt.size())
        throw DimensionError("training_strength: lengths differ, " + std::to_string(v0.size()) +
                             " vs " + std::to_string(vt.size()));
    Real acc = 0;
    for (std::size_t i = 0; i < v0.size(); ++i) acc += std::abs(v0[i] - vt[i]);
    return acc / static_cast<Real>(v0.size());
}

template <class Real>
Real update_ema(Real prev, Real current, Real beta) {
    return beta * prev + (Real(1) - beta) * current;
}

// Bookkeeping for one trainable vector. `param` aliases the live tensor in
// the model, so strength can be recomputed in place.
template <class Real>
struct VectorRecord {
    VectorId id;
    std::vector<Real> v0;
    Tensor<Real> param;
    Real strength = 0;
    Real ema = 0;
    bool frozen = false;

    std::int64_t dim() const { return static_cast<std::int64_t>(v0.size()); }

    Real recompute_strength() {
        strength = training_strength<Real>({v0.data(), v0.size()}, param.data());
        return strength;
    }
};

template <class Real>
struct VectorRegistry {
    std::vector<VectorRecord<Real>> records;

    bool empty() const { return records.empty(); }
    std::size_t size() const { return records.size(); }

    VectorRecord<Real>* find(const VectorId& id) {
        for (auto& r : records)
            if (r.id == id) return &r;
        return nullptr;
    }

    std::int64_t frozen_count() const {
        std::int64_t n = 0;
        for (const auto& r : records) n += r.frozen;
        return n;
    }
};

namespace detail {

// Shared freeze-step prologue: refresh S and its EMA, release everything.
template <class Real>
void refresh_and_release(VectorRegistry<Real>& reg, double beta) {
    if (reg.empty()) throw ContractError("avf_step: empty registry");
    for (auto& r : reg.records) {
        r.recompute_strength();
        r.ema = update_ema(r.ema, r.strength, static_cast<Real>(beta));
        r.frozen = false;
    }
}

} // namespace detail

// One freeze step: recompute every strength and EMA, unfreeze all, then
// freeze exactly min(k, N) records with the highest EMA. Ties break by the
// lexicographic vector id so runs are reproducible. A vector frozen now may
// rank lower later and become trainable again.
template <class Real>
std::vector<VectorId> avf_step(VectorRegistry<Real>& reg, const AvfConfig& cfg) {
    cfg.validate();
    detail::refresh_and_release(reg, cfg.beta);
    std::vector<std::size_t> order(reg.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (reg.records[a].ema != reg.records[b].ema) return reg.records[a].ema > reg.records[b].ema;
        return reg.records[a].id < reg.records[b].id;
    });
    const std::size_t n_freeze = std::min<std::size_t>(static_cast<std::size_t>(cfg.k), reg.size());
    std::vector<VectorId> frozen;
    frozen.reserve(n_freeze);
    for (std::size_t i = 0; i < n_freeze; ++i) {
        reg.records[order[i]].frozen = true;
        frozen.push_back(reg.records[order[i]].id);
    }
    return frozen;
}

// Baseline: same cadence and bookkeeping, selection uniform without
// replacement from the seeded stream.
template <class Real>
std::vector<VectorId> random_freeze_step(VectorRegistry<Real>& reg, std::int64_t k, Rng& rng,
                                         double beta = 0.99) {
    if (k < 0) throw ValidationError("random_freeze_step: k must be >= 0");
    detail::refresh_and_release(reg, beta);
    std::vector<std::size_t> order(reg.size());
    std::iota(order.begin(), order.end(), 0u);
    // Partial Fisher-Yates: the first n_freeze slots are a uniform sample.
    const std::size_t n_freeze = std::min<std::size_t>(static_cast<std::size_t>(k), reg.size());
    for (std::size_t i = 0; i < n_freeze; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(reg.size() - i)));
        std::swap(order[i], order[j]);
    }
    std::vector<VectorId> frozen;
    frozen.reserve(n_freeze);
    for (std::size_t i = 0; i < n_freeze; ++i) {
        reg.records[order[i]].frozen = true;
        frozen.push_back(reg.records[order[i]].id);
    }
    return frozen;
}

// lambda * sum_i |sigma_i| over the registry's singular-value vectors, as an
// in-graph loss term (biases excluded).
template <class Real>
Tensor<Real> l1_penalty(const VectorRegistry<Real>& reg, Real lambda) {
    if (lambda < Real(0)) throw ValidationError("l1_penalty: lambda must be >= 0");
    Tensor<Real> acc;
    bool any = false;
    for (const auto& r : reg.records) {
        if (r.id.kind != VecKind::sigma) continue;
        Tensor<Real> term = l1_sum(r.param);
        acc = any ? add(acc, term) : term;
        any = true;
    }
    if (!any) return Tensor<Real>::scalar(Real(0));
    return mul_scalar(acc, lambda);
}

// Inverted dropout on a singular-value vector; the comparison mode showing
// why plainly dropping singular values is not a substitute for freezing.
template <class Real>
Tensor<Real> sigma_dropout(const Tensor<Real>& sigma, Real p, Rng& rng, bool train_mode) {
    return dropout(sigma, p, rng, train_mode);
}

// Appends one row per record: step,layer,module,kind,S,S_ema,frozen.
template <class Real>
void registry_csv_rows(std::ostream& os, std::int64_t step, const VectorRegistry<Real>& reg) {
    for (const auto& r : reg.records) {
        os << step << ',' << r.id.layer << ',' << module_tag_name(r.id.module) << ','
           << vec_kind_name(r.id.kind) << ',' << r.strength << ',' << r.ema << ','
           << (r.frozen ? 1 : 0) << '\n';
    }
}

inline const char* registry_csv_header() { return "step,layer,module,kind,S,S_ema,frozen"; }

} // namespace specfit
