#include "specfit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "specfit/linalg.hpp"

namespace specfit {

namespace {

std::ostream& csv_num(std::ostream& os, double v) {
    os << std::setprecision(17) << v;
    return os;
}

// Reads a parameter array as doubles regardless of its stored precision.
std::vector<double> read_reals(const Checkpoint& ck, const std::string& name) {
    const CkptArray& a = ck.get(name);
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    if (a.dtype == Dtype::f32) {
        auto s = ck.get_f32(name);
        std::copy(s.begin(), s.end(), out.begin());
    } else if (a.dtype == Dtype::f64) {
        auto s = ck.get_f64(name);
        std::copy(s.begin(), s.end(), out.begin());
    } else {
        throw IoError("checkpoint: array '" + name + "' is not a float array");
    }
    return out;
}

Tensor<double> read_matrix(const Checkpoint& ck, const std::string& name) {
    const CkptArray& a = ck.get(name);
    if (a.shape.size() != 2)
        throw IoError("checkpoint: array '" + name + "' is not a matrix");
    return Tensor<double>::from(a.shape, read_reals(ck, name));
}

ExperimentConfig matching_configs(const Checkpoint& init, const Checkpoint& final_ck) {
    const std::string e_init = init.get_text("config");
    const std::string e_final = final_ck.get_text("config");
    if (e_init != e_final)
        throw ValidationError("analysis: checkpoints carry different configs");
    return ExperimentConfig::from_text(e_init);
}

double l1_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc;
}

// The per-layer dense update between the two checkpoints, in double.
Tensor<double> layer_delta(const ExperimentConfig& cfg, const Checkpoint& init,
                           const Checkpoint& final_ck, const std::string& prefix) {
    const TrainMode mode = cfg.train.mode;
    if (mode_is_spectral(mode)) {
        auto u_i = read_matrix(init, "param." + prefix + ".U");
        auto v_i = read_matrix(init, "param." + prefix + ".V");
        const auto& u_f = final_ck.get("param." + prefix + ".U");
        const auto& v_f = final_ck.get("param." + prefix + ".V");
        if (init.get("param." + prefix + ".U").bytes != u_f.bytes ||
            init.get("param." + prefix + ".V").bytes != v_f.bytes)
            throw ValidationError("analysis: frozen factors of '" + prefix +
                                  "' changed between checkpoints");
        auto s_i = read_reals(init, "param." + prefix + ".sigma");
        auto s_f = read_reals(final_ck, "param." + prefix + ".sigma");
        std::vector<double> ds(s_i.size());
        for (std::size_t i = 0; i < ds.size(); ++i) ds[i] = s_f[i] - s_i[i];
        NoGradGuard ng;
        const std::int64_t r = static_cast<std::int64_t>(ds.size());
        return matmul(u_i, scale_rows(transpose(v_i), Tensor<double>::from({r}, ds)));
    }
    if (mode == TrainMode::lora) {
        auto w = read_matrix(init, "param." + prefix + ".W");
        const double scale = cfg.train.lora_alpha / static_cast<double>(cfg.train.lora_r);
        NoGradGuard ng;
        auto merged = [&](const Checkpoint& ck) {
            auto a = read_matrix(ck, "param." + prefix + ".lora_a");
            auto b = read_matrix(ck, "param." + prefix + ".lora_b");
            return add(w, mul_scalar(matmul(a, b), scale));
        };
        return sub(merged(final_ck), merged(init));
    }
    // Dense modes: plain weight difference.
    NoGradGuard ng;
    return sub(read_matrix(final_ck, "param." + prefix + ".W"),
               read_matrix(init, "param." + prefix + ".W"));
}

std::string bias_name(const ExperimentConfig& cfg, const std::string& prefix) {
    return mode_is_spectral(cfg.train.mode) ? "param." + prefix + ".bias"
                                            : "param." + prefix + ".b";
}

} // namespace

std::vector<LayerId> tagged_layer_ids(const ModelSpec& ms) {
    std::vector<LayerId> out;
    if (ms.arch == Arch::mlp) {
        for (std::int64_t i = 0; i < ms.depth; ++i)
            out.push_back({i, i % 2 == 0 ? ModuleTag::f1 : ModuleTag::f2});
    } else {
        for (std::int64_t b = 0; b < ms.depth; ++b)
            for (ModuleTag t : {ModuleTag::q, ModuleTag::k, ModuleTag::v, ModuleTag::o,
                                ModuleTag::f1, ModuleTag::f2})
                out.push_back({b, t});
    }
    return out;
}

std::string tagged_prefix_for(const ModelSpec& ms, const LayerId& id) {
    const char* base = ms.arch == Arch::mlp ? "mlp" : "blk";
    return base + std::to_string(id.layer) + "." + module_tag_name(id.module);
}

SpectrumReport delta_spectrum(const Checkpoint& init, const Checkpoint& final_ck) {
    const ExperimentConfig cfg = matching_configs(init, final_ck);
    SpectrumReport rep;
    for (const LayerId& id : tagged_layer_ids(cfg.model)) {
        const std::string prefix = tagged_prefix_for(cfg.model, id);
        Tensor<double> delta = layer_delta(cfg, init, final_ck, prefix);
        SpectrumRow row;
        row.layer = id.layer;
        row.module = id.module;
        auto f = svd_thin(delta);
        row.sigma = f.sigma;
        row.fro_norm = frobenius_norm(delta);
        if (!row.sigma.empty() && row.sigma[0] > 0) {
            const double cut = 1e-8 * row.sigma[0];
            for (double s : row.sigma) row.eff_rank += s > cut;
        }
        row.bias_l1 = l1_diff(read_reals(init, bias_name(cfg, prefix)),
                              read_reals(final_ck, bias_name(cfg, prefix)));
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

VariationReport sigma_variation(const Checkpoint& init, const Checkpoint& final_ck,
                                std::int64_t n) {
    const ExperimentConfig cfg = matching_configs(init, final_ck);
    VariationReport rep;
    for (const LayerId& id : tagged_layer_ids(cfg.model)) {
        const std::string prefix = tagged_prefix_for(cfg.model, id);
        std::vector<double> s_i, s_f;
        if (mode_is_spectral(cfg.train.mode)) {
            s_i = read_reals(init, "param." + prefix + ".sigma");
            s_f = read_reals(final_ck, "param." + prefix + ".sigma");
        } else {
            // Dense or adapter run: factorize the (merged) weights.
            auto spectrum_of = [&](const Checkpoint& ck) {
                Tensor<double> w = read_matrix(ck, "param." + prefix + ".W");
                if (cfg.train.mode == TrainMode::lora) {
                    NoGradGuard ng;
                    const double scale =
                        cfg.train.lora_alpha / static_cast<double>(cfg.train.lora_r);
                    auto a = read_matrix(ck, "param." + prefix + ".lora_a");
                    auto b = read_matrix(ck, "param." + prefix + ".lora_b");
                    w = add(w, mul_scalar(matmul(a, b), scale));
                }
                return svd_thin(w).sigma;
            };
            s_i = spectrum_of(init);
            s_f = spectrum_of(final_ck);
        }
        VariationRow row;
        row.layer = id.layer;
        row.module = id.module;
        const std::int64_t take = std::min<std::int64_t>(n, static_cast<std::int64_t>(s_i.size()));
        for (std::int64_t i = 0; i < take; ++i)
            row.delta_sigma.push_back(s_f[static_cast<std::size_t>(i)] -
                                      s_i[static_cast<std::size_t>(i)]);
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

double StrengthReport::final_mean() const {
    if (final_grid.empty()) return 0.0;
    double acc = 0;
    for (const auto& r : final_grid) acc += r.strength;
    return acc / static_cast<double>(final_grid.size());
}

StrengthReport strength_heatmap(const std::vector<StrengthRow>& series) {
    StrengthReport rep;
    rep.series = series;
    std::int64_t last = 0;
    for (const auto& r : series) last = std::max(last, r.step);
    for (const auto& r : series)
        if (r.step == last) rep.final_grid.push_back(r);
    for (const auto& r : rep.series)
        if (r.strength < 0 || r.ema < 0)
            throw ValidationError("strength_heatmap: negative training strength in history");
    return rep;
}

void write_spectrum_csv(std::ostream& os, const SpectrumReport& rep) {
    os << "layer,module,index,sigma\n";
    for (const auto& row : rep.rows)
        for (std::size_t i = 0; i < row.sigma.size(); ++i) {
            os << row.layer << ',' << module_tag_name(row.module) << ',' << i << ',';
            csv_num(os, row.sigma[i]) << '\n';
        }
}

void write_strength_csv(std::ostream& os, const StrengthReport& rep) {
    os << registry_csv_header() << '\n';
    for (const auto& r : rep.series) {
        os << r.step << ',' << r.id.layer << ',' << module_tag_name(r.id.module) << ','
           << vec_kind_name(r.id.kind) << ',';
        csv_num(os, r.strength) << ',';
        csv_num(os, r.ema) << ',' << (r.frozen ? 1 : 0) << '\n';
    }
}

void write_variation_csv(std::ostream& os, const VariationReport& rep) {
    os << "layer,module,index,delta_sigma\n";
    for (const auto& row : rep.rows)
        for (std::size_t i = 0; i < row.delta_sigma.size(); ++i) {
            os << row.layer << ',' << module_tag_name(row.module) << ',' << i << ',';
            csv_num(os, row.delta_sigma[i]) << '\n';
        }
}

void write_ledger_csv(std::ostream& os, const LedgerReport& rep) {
    os << "layer,module,kind,total,frozen_sum,applied\n";
    for (const auto& r : rep.rows) {
        os << r.id.layer << ',' << module_tag_name(r.id.module) << ','
           << vec_kind_name(r.id.kind) << ',';
        csv_num(os, r.total) << ',';
        csv_num(os, r.frozen_sum) << ',';
        csv_num(os, r.applied) << '\n';
    }
}

std::vector<StrengthRow> load_strength_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != registry_csv_header())
        throw ValidationError("strength csv '" + path + "': unexpected header '" + line + "'");
    std::vector<StrengthRow> rows;
    std::int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        if (cells.size() != 7)
            throw ValidationError("strength csv '" + path + "' line " + std::to_string(line_no) +
                                  ": expected 7 columns");
        StrengthRow r;
        r.step = std::stoll(cells[0]);
        r.id.layer = std::stoll(cells[1]);
        r.id.module = module_tag_from_name(cells[2]);
        r.id.kind = cells[3] == "sigma" ? VecKind::sigma : VecKind::bias;
        r.strength = std::stod(cells[4]);
        r.ema = std::stod(cells[5]);
        r.frozen = cells[6] == "1";
        rows.push_back(r);
    }
    return rows;
}

} // namespace specfit
