#pragma once

// Experiment configuration: a flat, typed key=value text format with '#'
// comments. The canonical serialization (to_text) is what gets echoed into
// checkpoints, so a config round-trips exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "specfit/dataset.hpp"
#include "specfit/model.hpp"
#include "specfit/trainer.hpp"

namespace specfit {

struct ExperimentConfig {
    ModelSpec model;        // model.seed is assigned per run from `seeds`
    DatasetDescriptor data;
    TrainConfig train;      // train.max_steps is resolved from steps/epochs
    std::int64_t epochs = 3;
    std::int64_t steps = 0; // > 0 overrides epochs
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "runs/out";
    std::string source; // pretrained checkpoint consumed by finetune/ablate
    std::vector<std::string> cells;
    std::int64_t jobs = 1;

    void validate() const;
    std::string to_text() const;
    static ExperimentConfig from_text(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);

    bool operator==(const ExperimentConfig&) const = default;
};

} // namespace specfit
