// Command-line front end: pretrain / finetune / analyze / ablate over the
// flat key=value experiment configs, with flag overrides taking precedence.
// Exit codes: 0 success, 1 validation, 2 I/O, 3 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>

#include "specfit/commands.hpp"

namespace {

using namespace specfit;

struct Overrides {
    CLI::Option* seed = nullptr;
    CLI::Option* variant = nullptr;
    CLI::Option* mode = nullptr;
    CLI::Option* lr = nullptr;
    CLI::Option* steps = nullptr;
    CLI::Option* epochs = nullptr;
    CLI::Option* out = nullptr;
    CLI::Option* source = nullptr;
    CLI::Option* cells = nullptr;
    CLI::Option* jobs = nullptr;
    CLI::Option* grad_log = nullptr;
    CLI::Option* avf_ti = nullptr;
    CLI::Option* avf_tf = nullptr;
    CLI::Option* avf_nf = nullptr;
    CLI::Option* avf_k = nullptr;

    std::int64_t seed_v = 0;
    std::string variant_v, mode_v, out_v, source_v, cells_v;
    double lr_v = 0;
    std::int64_t steps_v = 0, epochs_v = 0, jobs_v = 0;
    bool grad_log_v = false;
    std::int64_t avf_ti_v = 0, avf_tf_v = 0, avf_nf_v = 0, avf_k_v = 0;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
    ov.seed = cmd->add_option("--seed", ov.seed_v, "Single seed replacing the config's seed list");
    ov.variant = cmd->add_option("--variant", ov.variant_v,
                                 "Trainable-set variant (sigma_a|sigma|sigma_a_plus_b|"
                                 "full_no_avf|full_avf)");
    ov.mode = cmd->add_option("--mode", ov.mode_v,
                              "Training mode (spectral|full_ft|bias_only|lora|l1|"
                              "random_freeze|sigma_dropout)");
    ov.lr = cmd->add_option("--lr", ov.lr_v, "Learning rate");
    ov.steps = cmd->add_option("--steps", ov.steps_v, "Total optimization steps");
    ov.epochs = cmd->add_option("--epochs", ov.epochs_v, "Training epochs");
    ov.out = cmd->add_option("--out", ov.out_v, "Output directory");
    ov.source = cmd->add_option("--source", ov.source_v, "Pretrained checkpoint path");
    ov.cells = cmd->add_option("--cells", ov.cells_v, "Comma-separated ablation cells");
    ov.jobs = cmd->add_option("--jobs", ov.jobs_v, "Parallel ablation workers");
    ov.grad_log = cmd->add_flag("--grad-log", ov.grad_log_v,
                                "Record per-step updates (sgd only; needed for the ledger)");
    ov.avf_ti = cmd->add_option("--avf.t-i", ov.avf_ti_v, "First freeze step");
    ov.avf_tf = cmd->add_option("--avf.t-f", ov.avf_tf_v, "Freeze period in steps");
    ov.avf_nf = cmd->add_option("--avf.n-f", ov.avf_nf_v, "Number of freeze steps");
    ov.avf_k = cmd->add_option("--avf.k", ov.avf_k_v, "Vectors frozen per freeze step");
}

ExperimentConfig load_with_overrides(const std::string& config_path, const Overrides& ov) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    if (ov.seed->count()) cfg.seeds = {static_cast<std::uint64_t>(ov.seed_v)};
    if (ov.variant->count()) cfg.train.variant = variant_from_name(ov.variant_v);
    if (ov.mode->count()) cfg.train.mode = train_mode_from_name(ov.mode_v);
    if (ov.lr->count()) cfg.train.lr = ov.lr_v;
    if (ov.steps->count()) cfg.steps = ov.steps_v;
    if (ov.epochs->count()) cfg.epochs = ov.epochs_v;
    if (ov.out->count()) cfg.out_dir = ov.out_v;
    if (ov.source->count()) cfg.source = ov.source_v;
    if (ov.jobs->count()) cfg.jobs = ov.jobs_v;
    if (ov.grad_log->count()) cfg.train.grad_log = ov.grad_log_v;
    if (ov.avf_ti->count()) cfg.train.avf.t_i = ov.avf_ti_v;
    if (ov.avf_tf->count()) cfg.train.avf.t_f = ov.avf_tf_v;
    if (ov.avf_nf->count()) cfg.train.avf.n_f = ov.avf_nf_v;
    if (ov.avf_k->count()) cfg.train.avf.k = ov.avf_k_v;
    if (ov.cells->count()) {
        cfg.cells.clear();
        std::istringstream is(ov.cells_v);
        std::string item;
        while (std::getline(is, item, ','))
            if (!item.empty()) cfg.cells.push_back(item);
    }
    return cfg;
}

void print_summary(const RunSummary& s) {
    std::cout << s.cell << " seed=" << s.seed << " final_loss=" << s.final_loss
              << " eval_loss=" << s.eval_loss << " eval_acc=" << s.eval_accuracy
              << " trainable=" << s.trainable << " (" << s.trainable_fraction * 100.0
              << "% of " << s.total_params << ")\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectral singular-value fine-tuning workbench"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov_pre, ov_fine, ov_ablate;

    auto* pre = app.add_subcommand("pretrain", "Train the dense source model");
    pre->add_option("--config", config_path, "Experiment config file")->required();
    add_override_flags(pre, ov_pre);

    auto* fine = app.add_subcommand("finetune", "Fine-tune from a pretrained checkpoint");
    fine->add_option("--config", config_path, "Experiment config file")->required();
    add_override_flags(fine, ov_fine);

    AnalyzeArgs an;
    auto* analyze = app.add_subcommand("analyze", "Emit CSV diagnostics for a finished run");
    analyze->add_option("--init", an.init_path, "Run-start checkpoint")->required();
    analyze->add_option("--final", an.final_path, "Run-end checkpoint")->required();
    analyze->add_option("--history", an.history_dir,
                        "Run directory holding registry.csv / gradlog.sfck");
    analyze->add_option("--out", an.out_dir, "Output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "Run the (cell x seed) comparison grid");
    ablate->add_option("--config", config_path, "Experiment config file")->required();
    add_override_flags(ablate, ov_ablate);

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) {
            print_summary(cmd_pretrain(load_with_overrides(config_path, ov_pre)));
        } else if (fine->parsed()) {
            print_summary(cmd_finetune(load_with_overrides(config_path, ov_fine)));
        } else if (analyze->parsed()) {
            cmd_analyze(an);
            std::cout << "wrote spectrum.csv strength.csv variation.csv ledger.csv to "
                      << an.out_dir << "\n";
        } else if (ablate->parsed()) {
            auto rows = cmd_ablate(load_with_overrides(config_path, ov_ablate));
            for (const auto& r : rows) {
                if (r.status == "ok") print_summary(r);
                else std::cerr << r.cell << " seed=" << r.seed << " " << r.status << "\n";
            }
        }
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
