#pragma once

// Bundled desk-scale datasets: synthetic blobs/moons generators, a CSV
// classification loader (header row, last column is the label), and byte-level
// text for the character language model. All shuffling and noise flows from
// the explicit seed.

#include <cstdint>
#include <string>
#include <vector>

#include "specfit/error.hpp"

namespace specfit {

enum class DatasetKind : std::uint8_t {
    csv_classification,
    char_lm,
    synthetic_blobs,
    synthetic_moons,
};

const char* dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& s);

struct DatasetDescriptor {
    DatasetKind kind = DatasetKind::synthetic_blobs;
    std::string path;              // csv_classification / char_lm input file
    std::int64_t n = 512;          // synthetic sample count
    std::int64_t classes = 3;      // blob cluster count
    std::int64_t dim = 2;          // synthetic feature dimension
    double noise = 0.15;
    double split_train = 0.8;
    double split_val = 0.2;
    bool normalize = false;        // standardize features with train-split stats
    std::int64_t seq_len = 32;     // char-lm window length

    void validate() const;
    bool operator==(const DatasetDescriptor&) const = default;
};

struct ClassificationData {
    std::int64_t dim = 0;
    std::int64_t classes = 0;
    std::vector<double> x; // n rows of dim features
    std::vector<std::int64_t> y;
    std::vector<std::int64_t> train_idx;
    std::vector<std::int64_t> val_idx;

    std::int64_t size() const { return static_cast<std::int64_t>(y.size()); }
};

struct CharLmData {
    std::vector<std::int64_t> tokens;
    std::int64_t vocab = 128; // fixed byte-level alphabet
    std::int64_t train_end = 0;
    std::int64_t seq_len = 32;
};

// Fixed 128-way byte alphabet; anything beyond 7-bit ASCII folds to '?'.
std::int64_t char_token(unsigned char c);

ClassificationData build_classification(const DatasetDescriptor& d, std::uint64_t seed);
CharLmData build_char_lm(const DatasetDescriptor& d, std::uint64_t seed);
CharLmData char_lm_from_text(const std::string& text, std::int64_t seq_len, double split_train);

std::string read_text_file(const std::string& path);

} // namespace specfit
