#include "specfit/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace specfit {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

// Fills auto (zero) model fields from the dataset and returns the spec the
// run will actually use.
ModelSpec resolve_model(const ExperimentConfig& cfg, const ClassificationData* cls) {
    ModelSpec ms = cfg.model;
    if (cfg.data.kind == DatasetKind::char_lm) {
        if (ms.arch != Arch::transformer)
            throw ValidationError("char_lm datasets require the transformer architecture");
        if (ms.classes == 0) ms.classes = 128;
        if (ms.max_seq < cfg.data.seq_len) ms.max_seq = cfg.data.seq_len;
    } else {
        if (ms.arch != Arch::mlp)
            throw ValidationError("classification datasets require the mlp architecture");
        if (!cls) throw ContractError("resolve_model: classification data missing");
        if (ms.classes == 0) ms.classes = cls->classes;
        if (ms.classes != cls->classes)
            throw ValidationError("model.classes = " + std::to_string(ms.classes) +
                                  " does not match the dataset's " +
                                  std::to_string(cls->classes));
        ms.input_dim = cls->dim;
    }
    ms.validate();
    return ms;
}

struct PreparedTask {
    Task<float> task;
    std::shared_ptr<const ClassificationData> cls;
    std::shared_ptr<const CharLmData> lm;
};

PreparedTask prepare_task(const ExperimentConfig& cfg, std::uint64_t seed) {
    PreparedTask out;
    if (cfg.data.kind == DatasetKind::char_lm) {
        out.lm = std::make_shared<CharLmData>(build_char_lm(cfg.data, seed));
        out.task = char_lm_task<float>(out.lm, cfg.train.batch);
    } else {
        out.cls = std::make_shared<ClassificationData>(build_classification(cfg.data, seed));
        out.task = classification_task<float>(out.cls, cfg.train.batch);
    }
    return out;
}

std::int64_t resolve_steps(const ExperimentConfig& cfg, const Task<float>& task) {
    if (cfg.steps > 0) return cfg.steps;
    return cfg.epochs * task.steps_per_epoch;
}

void write_history_csv(const std::string& path, const TrainResult<float>& res) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "step,loss,lr,frozen_count\n";
    os << std::setprecision(9);
    for (const auto& s : res.steps)
        os << s.step << ',' << s.loss << ',' << s.lr << ',' << s.frozen_count << '\n';
}

void write_registry_csv(const std::string& path, const TrainResult<float>& res) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << registry_csv_header() << '\n';
    os << std::setprecision(9);
    for (const auto& snap : res.registry_history) {
        for (const auto& row : snap.rows) {
            os << snap.step << ',' << row.id.layer << ',' << module_tag_name(row.id.module)
               << ',' << vec_kind_name(row.id.kind) << ',' << row.strength << ',' << row.ema
               << ',' << (row.frozen ? 1 : 0) << '\n';
        }
    }
}

RunSummary summarize(const ExperimentConfig& cfg, std::uint64_t seed,
                     const TrainResult<float>& res, const std::string& cell) {
    RunSummary s;
    s.seed = seed;
    s.cell = cell;
    s.final_loss = static_cast<double>(res.final_loss);
    s.eval_loss = static_cast<double>(res.final_eval.loss);
    s.eval_accuracy = res.final_eval.accuracy;
    s.trainable = res.trainable_count;
    s.total_params = res.total_params;
    s.trainable_fraction =
        res.total_params > 0 ? static_cast<double>(res.trainable_count) / res.total_params : 0.0;
    s.steps = static_cast<std::int64_t>(res.steps.size());
    (void)cfg;
    return s;
}

// One fine-tuning run: structure the model per mode, train, write artifacts.
RunSummary finetune_cell(const ExperimentConfig& cfg, std::uint64_t seed,
                         const std::string& out_dir, const std::string& cell) {
    if (cfg.source.empty())
        throw ValidationError("finetune: config needs 'source = <pretrained.sfck>'");
    Checkpoint source = Checkpoint::load(cfg.source);
    const ExperimentConfig source_cfg = ExperimentConfig::from_text(source.get_text("config"));

    PreparedTask pt = prepare_task(cfg, seed);
    ModelSpec ms = resolve_model(cfg, pt.cls.get());
    // The fine-tuned model must be the pretrained one, structurally.
    ModelSpec src_ms = source_cfg.model;
    if (src_ms.classes == 0 || src_ms.input_dim == 0) {
        // The source echo may predate dataset resolution; trust the arrays.
        src_ms = ms;
    }
    ModelSpec a = ms, b = src_ms;
    a.seed = b.seed = 0;
    if (!(a == b))
        throw ValidationError("finetune: model spec does not match the source checkpoint");

    ms.seed = seed;
    auto model = build_model<float>(ms);
    load_model_state(model, source);

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.max_steps = resolve_steps(cfg, pt.task);
    {
        ExperimentConfig echo_cfg = cfg;
        echo_cfg.model = ms;
        echo_cfg.model.seed = 1; // canonical echo, independent of the run seed
        tc.config_echo = echo_cfg.to_text();
    }

    VectorRegistry<float> reg;
    switch (tc.mode) {
        case TrainMode::spectral:
            reg = spectralize(model, tc.variant);
            break;
        case TrainMode::l1:
        case TrainMode::random_freeze:
        case TrainMode::sigma_dropout:
            reg = spectralize(model, Variant::full_no_avf);
            break;
        case TrainMode::full_ft:
            set_full_ft(model);
            break;
        case TrainMode::bias_only:
            set_bias_only(model);
            break;
        case TrainMode::lora:
            attach_lora(model, tc.lora_r, static_cast<float>(tc.lora_alpha));
            break;
    }

    auto res = train(model, reg, pt.task, tc);

    ensure_dir(out_dir);
    res.init_ckpt.save(out_dir + "/init.sfck");
    res.final_ckpt.save(out_dir + "/final.sfck");
    write_history_csv(out_dir + "/history.csv", res);
    write_registry_csv(out_dir + "/registry.csv", res);
    if (res.gradlog_enabled) {
        Checkpoint glog;
        glog.put_text("config", tc.config_echo);
        save_gradlog(glog, res.gradlog);
        glog.save(out_dir + "/gradlog.sfck");
    }
    RunSummary s = summarize(cfg, seed, res, cell);
    write_summary_file(out_dir + "/summary.txt", s);
    return s;
}

struct CellSpec {
    std::string name;
    TrainMode mode;
    Variant variant;
    bool keep_schedule; // whether the configured avf schedule applies
};

CellSpec cell_from_name(const std::string& name) {
    for (Variant v : {Variant::sigma_a, Variant::sigma, Variant::sigma_a_plus_b,
                      Variant::full_no_avf, Variant::full_avf})
        if (name == variant_name(v))
            return {name, TrainMode::spectral, v, v == Variant::full_avf};
    if (name == "full_ft") return {name, TrainMode::full_ft, Variant::full_no_avf, false};
    if (name == "bias_only") return {name, TrainMode::bias_only, Variant::full_no_avf, false};
    if (name == "lora") return {name, TrainMode::lora, Variant::full_no_avf, false};
    if (name == "l1") return {name, TrainMode::l1, Variant::full_no_avf, false};
    if (name == "random_freeze")
        return {name, TrainMode::random_freeze, Variant::full_no_avf, true};
    if (name == "sigma_dropout")
        return {name, TrainMode::sigma_dropout, Variant::full_no_avf, false};
    throw ValidationError("ablate: unknown cell '" + name + "'");
}

} // namespace

void write_summary_file(const std::string& path, const RunSummary& s) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << std::setprecision(17);
    os << "seed = " << s.seed << "\n";
    os << "cell = " << s.cell << "\n";
    os << "final_loss = " << s.final_loss << "\n";
    os << "eval_loss = " << s.eval_loss << "\n";
    os << "eval_accuracy = " << s.eval_accuracy << "\n";
    os << "trainable = " << s.trainable << "\n";
    os << "total_params = " << s.total_params << "\n";
    os << "trainable_fraction = " << s.trainable_fraction << "\n";
    os << "steps = " << s.steps << "\n";
    os << "status = " << s.status << "\n";
}

RunSummary cmd_pretrain(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::uint64_t seed = cfg.seeds.front();
    PreparedTask pt = prepare_task(cfg, seed);
    ModelSpec ms = resolve_model(cfg, pt.cls.get());
    ms.seed = seed;
    auto model = build_model<float>(ms);
    set_full_ft(model);

    TrainConfig tc = cfg.train;
    tc.mode = TrainMode::full_ft;
    tc.avf = AvfConfig{};
    tc.grad_log = false;
    tc.seed = seed;
    tc.max_steps = resolve_steps(cfg, pt.task);
    {
        ExperimentConfig echo_cfg = cfg;
        echo_cfg.model = ms;
        echo_cfg.model.seed = 1;
        echo_cfg.train.mode = TrainMode::full_ft;
        echo_cfg.train.avf = AvfConfig{};
        tc.config_echo = echo_cfg.to_text();
    }

    VectorRegistry<float> reg;
    auto res = train(model, reg, pt.task, tc);

    ensure_dir(cfg.out_dir);
    res.final_ckpt.save(cfg.out_dir + "/pretrained.sfck");
    write_history_csv(cfg.out_dir + "/history.csv", res);
    RunSummary s = summarize(cfg, seed, res, "pretrain");
    write_summary_file(cfg.out_dir + "/summary.txt", s);
    return s;
}

RunSummary cmd_finetune(const ExperimentConfig& cfg) {
    cfg.validate();
    return finetune_cell(cfg, cfg.seeds.front(), cfg.out_dir,
                         train_mode_name(cfg.train.mode));
}

void cmd_analyze(const AnalyzeArgs& args) {
    if (args.out_dir.empty()) throw ValidationError("analyze: out dir must be set");
    Checkpoint init = Checkpoint::load(args.init_path);
    Checkpoint final_ck = Checkpoint::load(args.final_path);
    ensure_dir(args.out_dir);

    {
        auto rep = delta_spectrum(init, final_ck);
        std::ofstream os(args.out_dir + "/spectrum.csv", std::ios::trunc);
        write_spectrum_csv(os, rep);
    }
    {
        auto rep = sigma_variation(init, final_ck);
        std::ofstream os(args.out_dir + "/variation.csv", std::ios::trunc);
        write_variation_csv(os, rep);
    }
    {
        StrengthReport rep;
        const std::string reg_csv = args.history_dir.empty()
                                        ? std::string()
                                        : args.history_dir + "/registry.csv";
        if (!reg_csv.empty() && fs::exists(reg_csv))
            rep = strength_heatmap(load_strength_csv(reg_csv));
        std::ofstream os(args.out_dir + "/strength.csv", std::ios::trunc);
        write_strength_csv(os, rep);
    }
    {
        LedgerReport rep;
        const std::string glog_path = args.history_dir.empty()
                                          ? std::string()
                                          : args.history_dir + "/gradlog.sfck";
        if (!glog_path.empty() && fs::exists(glog_path)) {
            Checkpoint glog = Checkpoint::load(glog_path);
            rep = avf_ledger(load_gradlog<float>(glog));
            if (!rep.all_exact)
                throw NumericalError("analyze: the freeze ledger identity failed");
        }
        std::ofstream os(args.out_dir + "/ledger.csv", std::ios::trunc);
        write_ledger_csv(os, rep);
    }
}

std::vector<RunSummary> cmd_ablate(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<std::string> cells = cfg.cells;
    if (cells.empty())
        cells = {"sigma_a", "sigma", "sigma_a_plus_b", "full_no_avf", "full_avf"};

    struct Item {
        std::size_t cell_idx;
        std::size_t seed_idx;
    };
    std::vector<Item> items;
    for (std::size_t c = 0; c < cells.size(); ++c)
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) items.push_back({c, s});

    std::vector<RunSummary> results(items.size());
    std::mutex next_mu;
    std::size_t next = 0;

    auto worker = [&]() {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lk(next_mu);
                if (next >= items.size()) return;
                i = next++;
            }
            const Item it = items[i];
            const CellSpec cell = cell_from_name(cells[it.cell_idx]);
            const std::uint64_t seed = cfg.seeds[it.seed_idx];
            ExperimentConfig run_cfg = cfg;
            run_cfg.train.mode = cell.mode;
            run_cfg.train.variant = cell.variant;
            if (!cell.keep_schedule) run_cfg.train.avf = AvfConfig{};
            const std::string dir =
                cfg.out_dir + "/" + cell.name + "/seed" + std::to_string(seed);
            try {
                results[i] = finetune_cell(run_cfg, seed, dir, cell.name);
            } catch (const std::exception& e) {
                RunSummary fail;
                fail.seed = seed;
                fail.cell = cell.name;
                fail.status = std::string("failed: ") + e.what();
                results[i] = fail;
            }
        }
    };

    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), items.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Aggregate into the comparison table.
    ensure_dir(cfg.out_dir);
    std::ofstream os(cfg.out_dir + "/ablation.csv", std::ios::trunc);
    if (!os) throw IoError("cannot open '" + cfg.out_dir + "/ablation.csv' for writing");
    os << "cell,seeds,metric_mean,metric_std,accuracy_mean,trainable,trainable_fraction,status\n";
    os << std::setprecision(9);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        std::vector<const RunSummary*> ok;
        std::string status = "ok";
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
            const RunSummary& r = results[c * cfg.seeds.size() + s];
            if (r.status == "ok") ok.push_back(&r);
            else status = r.status;
        }
        double mean = 0, stdv = 0, acc = 0;
        std::int64_t trainable = 0;
        double fraction = 0;
        if (!ok.empty()) {
            for (auto* r : ok) {
                const double metric = std::isnan(r->eval_loss) ? r->final_loss : r->eval_loss;
                mean += metric;
                acc += r->eval_accuracy;
            }
            mean /= static_cast<double>(ok.size());
            acc /= static_cast<double>(ok.size());
            for (auto* r : ok) {
                const double metric = std::isnan(r->eval_loss) ? r->final_loss : r->eval_loss;
                stdv += (metric - mean) * (metric - mean);
            }
            stdv = std::sqrt(stdv / static_cast<double>(ok.size()));
            trainable = ok.front()->trainable;
            fraction = ok.front()->trainable_fraction;
        }
        os << cells[c] << ',' << ok.size() << ',' << mean << ',' << stdv << ',' << acc << ','
           << trainable << ',' << fraction << ',' << (status == "ok" ? "ok" : "failed") << '\n';
    }

    // The per-item ordering in `results` is (cell-major, seed-minor).
    return results;
}

} // namespace specfit
