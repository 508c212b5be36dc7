#include "specfit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "specfit/rng.hpp"

namespace specfit {

const char* dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::csv_classification: return "csv_classification";
        case DatasetKind::char_lm: return "char_lm";
        case DatasetKind::synthetic_blobs: return "synthetic_blobs";
        case DatasetKind::synthetic_moons: return "synthetic_moons";
    }
    return "?";
}

DatasetKind dataset_kind_from_name(const std::string& s) {
    for (DatasetKind k : {DatasetKind::csv_classification, DatasetKind::char_lm,
                          DatasetKind::synthetic_blobs, DatasetKind::synthetic_moons})
        if (s == dataset_kind_name(k)) return k;
    throw ValidationError("unknown dataset kind '" + s + "'");
}

void DatasetDescriptor::validate() const {
    if (std::abs(split_train + split_val - 1.0) > 1e-9)
        throw ValidationError("dataset: split fractions must sum to 1, got " +
                              std::to_string(split_train) + " + " + std::to_string(split_val));
    if (split_train <= 0.0 || split_val < 0.0)
        throw ValidationError("dataset: train fraction must be positive");
    if (kind == DatasetKind::synthetic_blobs || kind == DatasetKind::synthetic_moons) {
        if (n < 4) throw ValidationError("dataset: need at least 4 samples");
        if (dim < 1) throw ValidationError("dataset: dim must be >= 1");
        if (kind == DatasetKind::synthetic_blobs && classes < 2)
            throw ValidationError("dataset: blobs need >= 2 classes");
    }
    if (kind == DatasetKind::char_lm && seq_len < 2)
        throw ValidationError("dataset: seq_len must be >= 2");
    if ((kind == DatasetKind::csv_classification || kind == DatasetKind::char_lm) && path.empty())
        throw ValidationError("dataset: a file path is required for " +
                              std::string(dataset_kind_name(kind)));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::int64_t char_token(unsigned char c) { return c < 128 ? c : static_cast<std::int64_t>('?'); }

namespace {

void split_indices(ClassificationData& d, double train_frac, std::uint64_t seed) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(d.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed ^ 0x5eedu);
    rng.shuffle(idx);
    const std::int64_t n_train =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(train_frac * d.size())));
    d.train_idx.assign(idx.begin(), idx.begin() + std::min<std::int64_t>(n_train, d.size()));
    d.val_idx.assign(idx.begin() + std::min<std::int64_t>(n_train, d.size()), idx.end());
    if (d.val_idx.empty()) d.val_idx = d.train_idx; // degenerate split: evaluate on train
}

void standardize(ClassificationData& d) {
    for (std::int64_t j = 0; j < d.dim; ++j) {
        double mu = 0;
        for (auto i : d.train_idx) mu += d.x[static_cast<std::size_t>(i * d.dim + j)];
        mu /= static_cast<double>(d.train_idx.size());
        double var = 0;
        for (auto i : d.train_idx) {
            const double v = d.x[static_cast<std::size_t>(i * d.dim + j)] - mu;
            var += v * v;
        }
        var /= static_cast<double>(d.train_idx.size());
        const double inv = 1.0 / std::sqrt(var + 1e-12);
        for (std::int64_t i = 0; i < d.size(); ++i)
            d.x[static_cast<std::size_t>(i * d.dim + j)] =
                (d.x[static_cast<std::size_t>(i * d.dim + j)] - mu) * inv;
    }
}

ClassificationData make_blobs(const DatasetDescriptor& dd, std::uint64_t seed) {
    ClassificationData d;
    d.dim = dd.dim;
    d.classes = dd.classes;
    d.x.resize(static_cast<std::size_t>(dd.n * dd.dim));
    d.y.resize(static_cast<std::size_t>(dd.n));
    Rng rng(seed);
    // Cluster centers on a circle in the first two coordinates, zero beyond.
    const double radius = 3.0;
    for (std::int64_t i = 0; i < dd.n; ++i) {
        const std::int64_t c = i % dd.classes;
        const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(dd.classes);
        for (std::int64_t j = 0; j < dd.dim; ++j) {
            double center = 0.0;
            if (j == 0) center = radius * std::cos(angle);
            if (j == 1) center = radius * std::sin(angle);
            d.x[static_cast<std::size_t>(i * dd.dim + j)] = center + dd.noise * rng.normal();
        }
        d.y[static_cast<std::size_t>(i)] = c;
    }
    return d;
}

ClassificationData make_moons(const DatasetDescriptor& dd, std::uint64_t seed) {
    if (dd.dim < 2) throw ValidationError("dataset: moons need dim >= 2");
    ClassificationData d;
    d.dim = dd.dim;
    d.classes = 2;
    d.x.resize(static_cast<std::size_t>(dd.n * dd.dim), 0.0);
    d.y.resize(static_cast<std::size_t>(dd.n));
    Rng rng(seed);
    for (std::int64_t i = 0; i < dd.n; ++i) {
        const std::int64_t c = i % 2;
        const double t = M_PI * rng.uniform();
        double px, py;
        if (c == 0) {
            px = std::cos(t);
            py = std::sin(t);
        } else {
            px = 1.0 - std::cos(t);
            py = 0.5 - std::sin(t);
        }
        d.x[static_cast<std::size_t>(i * dd.dim + 0)] = px + dd.noise * rng.normal();
        d.x[static_cast<std::size_t>(i * dd.dim + 1)] = py + dd.noise * rng.normal();
        for (std::int64_t j = 2; j < dd.dim; ++j)
            d.x[static_cast<std::size_t>(i * dd.dim + j)] = dd.noise * rng.normal();
        d.y[static_cast<std::size_t>(i)] = c;
    }
    return d;
}

ClassificationData load_csv(const DatasetDescriptor& dd) {
    std::ifstream in(dd.path);
    if (!in) throw IoError("cannot open '" + dd.path + "'");
    std::string line;
    if (!std::getline(in, line))
        throw ValidationError("csv '" + dd.path + "': missing header row");
    const auto n_cols = static_cast<std::int64_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (n_cols < 2)
        throw ValidationError("csv '" + dd.path + "': need at least one feature and a label");

    ClassificationData d;
    d.dim = n_cols - 1;
    std::vector<std::string> label_names;
    std::int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        if (static_cast<std::int64_t>(cells.size()) != n_cols)
            throw ValidationError("csv '" + dd.path + "' line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(n_cols) + " columns, got " +
                                  std::to_string(cells.size()));
        for (std::int64_t j = 0; j < d.dim; ++j) {
            try {
                d.x.push_back(std::stod(cells[static_cast<std::size_t>(j)]));
            } catch (const std::exception&) {
                throw ValidationError("csv '" + dd.path + "' line " + std::to_string(line_no) +
                                      ": bad number '" + cells[static_cast<std::size_t>(j)] + "'");
            }
        }
        const std::string& lbl = cells.back();
        auto it = std::find(label_names.begin(), label_names.end(), lbl);
        if (it == label_names.end()) {
            label_names.push_back(lbl);
            d.y.push_back(static_cast<std::int64_t>(label_names.size()) - 1);
        } else {
            d.y.push_back(it - label_names.begin());
        }
    }
    if (d.y.empty()) throw ValidationError("csv '" + dd.path + "': no data rows");
    d.classes = static_cast<std::int64_t>(label_names.size());
    if (d.classes < 2) throw ValidationError("csv '" + dd.path + "': need at least two classes");
    return d;
}

} // namespace

ClassificationData build_classification(const DatasetDescriptor& d, std::uint64_t seed) {
    d.validate();
    ClassificationData out;
    switch (d.kind) {
        case DatasetKind::synthetic_blobs: out = make_blobs(d, seed); break;
        case DatasetKind::synthetic_moons: out = make_moons(d, seed); break;
        case DatasetKind::csv_classification: out = load_csv(d); break;
        default:
            throw ValidationError(std::string("dataset kind ") + dataset_kind_name(d.kind) +
                                  " is not a classification dataset");
    }
    split_indices(out, d.split_train, seed);
    if (d.normalize) standardize(out);
    return out;
}

CharLmData char_lm_from_text(const std::string& text, std::int64_t seq_len, double split_train) {
    CharLmData d;
    d.seq_len = seq_len;
    d.tokens.reserve(text.size());
    for (unsigned char c : text) d.tokens.push_back(char_token(c));
    if (static_cast<std::int64_t>(d.tokens.size()) < 4 * seq_len)
        throw ValidationError("char_lm: corpus too small (" + std::to_string(d.tokens.size()) +
                              " tokens for seq_len " + std::to_string(seq_len) + ")");
    d.train_end = static_cast<std::int64_t>(
        std::llround(split_train * static_cast<double>(d.tokens.size())));
    d.train_end = std::max<std::int64_t>(d.train_end, 2 * seq_len);
    d.train_end = std::min<std::int64_t>(d.train_end, static_cast<std::int64_t>(d.tokens.size()));
    return d;
}

CharLmData build_char_lm(const DatasetDescriptor& d, std::uint64_t) {
    d.validate();
    if (d.kind != DatasetKind::char_lm)
        throw ValidationError("build_char_lm called with a non-text dataset");
    return char_lm_from_text(read_text_file(d.path), d.seq_len, d.split_train);
}

} // namespace specfit
