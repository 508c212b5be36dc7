#pragma once

// Post-hoc diagnostics over checkpoints and run histories: singular spectra
// of the incremental weights, training-strength grids, singular-value
// variation maps, and the freeze-ledger identity. Everything is exported as
// CSV with documented headers; rendering is a non-goal.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "specfit/checkpoint.hpp"
#include "specfit/config.hpp"
#include "specfit/spectral.hpp"
#include "specfit/trainer.hpp"

namespace specfit {

struct SpectrumRow {
    std::int64_t layer = 0;
    ModuleTag module = ModuleTag::other;
    std::vector<double> sigma; // descending singular values of the update
    std::int64_t eff_rank = 0;
    double fro_norm = 0;
    double bias_l1 = 0;
};

struct SpectrumReport {
    std::vector<SpectrumRow> rows;
};

struct StrengthRow {
    std::int64_t step = 0;
    VectorId id;
    double strength = 0;
    double ema = 0;
    bool frozen = false;
};

struct StrengthReport {
    std::vector<StrengthRow> series;
    std::vector<StrengthRow> final_grid; // rows at the largest step

    double final_mean() const;
};

struct VariationRow {
    std::int64_t layer = 0;
    ModuleTag module = ModuleTag::other;
    std::vector<double> delta_sigma; // first n signed changes
};

struct VariationReport {
    std::vector<VariationRow> rows;
};

struct LedgerRow {
    VectorId id;
    double total = 0;      // signed coordinate sum of every per-step update
    double frozen_sum = 0; // same, restricted to frozen steps
    double applied = 0;    // what the optimizer actually accumulated
    bool exact = false;    // replayed unfrozen stream == applied, bit for bit
};

struct LedgerReport {
    std::vector<LedgerRow> rows;
    bool all_exact = true;
};

// Tagged layer ids in traversal order for a spec, without building a model.
std::vector<LayerId> tagged_layer_ids(const ModelSpec& ms);
std::string tagged_prefix_for(const ModelSpec& ms, const LayerId& id);

// Singular spectrum of the per-layer update between two checkpoints of the
// same run: factored runs rebuild U diag(dsigma) V^T, dense runs diff the
// weights, adapter runs diff the merged weights. All math in double.
SpectrumReport delta_spectrum(const Checkpoint& init, const Checkpoint& final_ck);

// Signed change of the first n singular values per layer. Factored runs read
// the stored sigma; dense and adapter runs factorize the (merged) weights.
VariationReport sigma_variation(const Checkpoint& init, const Checkpoint& final_ck,
                                std::int64_t n = 64);

StrengthReport strength_heatmap(const std::vector<StrengthRow>& series);

template <class Real>
StrengthReport strength_heatmap(const TrainResult<Real>& history) {
    std::vector<StrengthRow> series;
    for (const auto& snap : history.registry_history)
        for (const auto& row : snap.rows)
            series.push_back({snap.step, row.id, static_cast<double>(row.strength),
                              static_cast<double>(row.ema), row.frozen});
    return strength_heatmap(series);
}

// The freeze-ledger identity: per vector, the sum of logged updates over
// unfrozen steps must equal the accumulated applied update bit for bit, and
// total - frozen is that same stream by construction.
template <class Real>
LedgerReport avf_ledger(const GradLog<Real>& log) {
    if (log.vecs.empty())
        throw ContractError("avf_ledger: history has no gradient log (enable grad_log)");
    LedgerReport rep;
    for (const auto& gl : log.vecs) {
        LedgerRow row;
        row.id = gl.id;
        std::vector<Real> recon(gl.applied_acc.size(), Real(0));
        double total = 0, frozen = 0;
        for (std::size_t s = 0; s < gl.updates.size(); ++s) {
            double step_sum = 0;
            for (Real u : gl.updates[s]) step_sum += static_cast<double>(u);
            total += step_sum;
            if (gl.frozen[s]) {
                frozen += step_sum;
            } else {
                for (std::size_t j = 0; j < recon.size(); ++j) recon[j] += gl.updates[s][j];
            }
        }
        row.total = total;
        row.frozen_sum = frozen;
        row.exact = true;
        double applied = 0;
        for (std::size_t j = 0; j < recon.size(); ++j) {
            applied += static_cast<double>(gl.applied_acc[j]);
            if (recon[j] != gl.applied_acc[j]) row.exact = false;
        }
        row.applied = applied;
        rep.all_exact = rep.all_exact && row.exact;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

// GradLog persistence inside a .sfck container.
template <class Real>
void save_gradlog(Checkpoint& ck, const GradLog<Real>& log) {
    const std::int64_t n = static_cast<std::int64_t>(log.vecs.size());
    std::vector<std::int64_t> layer(log.vecs.size());
    std::vector<unsigned char> module(log.vecs.size()), kind(log.vecs.size());
    for (std::size_t i = 0; i < log.vecs.size(); ++i) {
        layer[i] = log.vecs[i].id.layer;
        module[i] = static_cast<unsigned char>(log.vecs[i].id.module);
        kind[i] = static_cast<unsigned char>(log.vecs[i].id.kind);
    }
    ck.put_i64("gradlog.layer", {n}, layer);
    ck.put_u8("gradlog.module", {n}, module);
    ck.put_u8("gradlog.kind", {n}, kind);
    ck.put_i64("gradlog.steps", {static_cast<std::int64_t>(log.steps.size())}, log.steps);
    for (std::size_t i = 0; i < log.vecs.size(); ++i) {
        const auto& gl = log.vecs[i];
        const std::int64_t s = static_cast<std::int64_t>(gl.updates.size());
        const std::int64_t d = static_cast<std::int64_t>(gl.applied_acc.size());
        std::vector<Real> flat(static_cast<std::size_t>(s * d));
        for (std::int64_t si = 0; si < s; ++si)
            std::copy(gl.updates[static_cast<std::size_t>(si)].begin(),
                      gl.updates[static_cast<std::size_t>(si)].end(), flat.begin() + si * d);
        const std::string p = "gradlog.v" + std::to_string(i);
        ckpt_put_real<Real>(ck, p + ".updates", {s, d}, flat);
        ck.put_u8(p + ".frozen", {s}, gl.frozen);
        ckpt_put_real<Real>(ck, p + ".applied", {d}, gl.applied_acc);
    }
}

template <class Real>
GradLog<Real> load_gradlog(const Checkpoint& ck) {
    GradLog<Real> log;
    if (!ck.has("gradlog.layer"))
        throw ContractError("avf_ledger: history has no gradient log (enable grad_log)");
    auto layer = ck.get_i64("gradlog.layer");
    auto module = ck.get_u8("gradlog.module");
    auto kind = ck.get_u8("gradlog.kind");
    auto steps = ck.get_i64("gradlog.steps");
    log.steps.assign(steps.begin(), steps.end());
    for (std::size_t i = 0; i < layer.size(); ++i) {
        GradLogVec<Real> gl;
        gl.id = {layer[i], static_cast<ModuleTag>(module[i]), static_cast<VecKind>(kind[i])};
        const std::string p = "gradlog.v" + std::to_string(i);
        const auto& updates_arr = ck.get(p + ".updates");
        const std::int64_t s = updates_arr.shape.at(0);
        const std::int64_t d = updates_arr.shape.at(1);
        auto flat = ckpt_get_real<Real>(ck, p + ".updates");
        for (std::int64_t si = 0; si < s; ++si)
            gl.updates.emplace_back(flat.begin() + si * d, flat.begin() + (si + 1) * d);
        auto froz = ck.get_u8(p + ".frozen");
        gl.frozen.assign(froz.begin(), froz.end());
        auto applied = ckpt_get_real<Real>(ck, p + ".applied");
        gl.applied_acc.assign(applied.begin(), applied.end());
        log.vecs.push_back(std::move(gl));
    }
    return log;
}

// CSV emitters; headers are part of the public contract.
void write_spectrum_csv(std::ostream& os, const SpectrumReport& rep);
void write_strength_csv(std::ostream& os, const StrengthReport& rep);
void write_variation_csv(std::ostream& os, const VariationReport& rep);
void write_ledger_csv(std::ostream& os, const LedgerReport& rep);

std::vector<StrengthRow> load_strength_csv(const std::string& path);

} // namespace specfit
