#pragma once

// Command implementations behind the CLI: pretraining the dense source model,
// fine-tuning with any of the supported modes, post-hoc analysis, and the
// (variant x seed) ablation grid. Each command writes its artifacts under the
// configured output directory and is idempotent with respect to re-runs.

#include <optional>
#include <string>
#include <vector>

#include "specfit/analysis.hpp"
#include "specfit/config.hpp"

namespace specfit {

struct RunSummary {
    std::uint64_t seed = 0;
    std::string cell;
    double final_loss = 0;
    double eval_loss = 0;
    double eval_accuracy = 0;
    std::int64_t trainable = 0;
    std::int64_t total_params = 0;
    double trainable_fraction = 0;
    std::int64_t steps = 0;
    std::string status = "ok";
};

struct AnalyzeArgs {
    std::string init_path;
    std::string final_path;
    std::string history_dir; // optional: registry.csv / gradlog.sfck live here
    std::string out_dir;
};

// Trains the dense source model on the configured dataset and writes
// pretrained.sfck, history.csv and summary.txt.
RunSummary cmd_pretrain(const ExperimentConfig& cfg);

// Loads cfg.source, applies the configured fine-tuning mode, trains, and
// writes init.sfck, final.sfck, history.csv, registry.csv, summary.txt and
// (when enabled) gradlog.sfck.
RunSummary cmd_finetune(const ExperimentConfig& cfg);

// Writes spectrum.csv, strength.csv, variation.csv and ledger.csv.
void cmd_analyze(const AnalyzeArgs& args);

// Runs the (cell x seed) grid and writes ablation.csv; per-cell failures are
// recorded in the table without aborting the sweep.
std::vector<RunSummary> cmd_ablate(const ExperimentConfig& cfg);

void write_summary_file(const std::string& path, const RunSummary& s);

} // namespace specfit
