#include "specfit/config.hpp"

#include <iomanip>
#include <sstream>

namespace specfit {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ValidationError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ValidationError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::istringstream is(v);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string fmt_f64(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

} // namespace

void ExperimentConfig::validate() const {
    // The model spec is validated after dataset resolution fills the auto
    // (zero) fields; see resolve_model in the command layer.
    data.validate();
    train.validate();
    if (seeds.empty()) throw ValidationError("config: seeds must be non-empty");
    if (epochs < 0 || steps < 0)
        throw ValidationError("config: epochs and steps must be >= 0");
    if (epochs == 0 && steps == 0)
        throw ValidationError("config: one of epochs or steps must be positive");
    if (jobs < 1) throw ValidationError("config: jobs must be >= 1");
    if (out_dir.empty()) throw ValidationError("config: out dir must be set");
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream os;
    os << "# specfit experiment config\n";
    os << "model.arch = " << arch_name(model.arch) << "\n";
    os << "model.depth = " << model.depth << "\n";
    os << "model.hidden = " << model.hidden << "\n";
    os << "model.heads = " << model.heads << "\n";
    os << "model.classes = " << model.classes << "\n";
    os << "model.input_dim = " << model.input_dim << "\n";
    os << "model.ffn = " << model.ffn << "\n";
    os << "model.max_seq = " << model.max_seq << "\n";
    os << "data.kind = " << dataset_kind_name(data.kind) << "\n";
    os << "data.path = " << data.path << "\n";
    os << "data.n = " << data.n << "\n";
    os << "data.classes = " << data.classes << "\n";
    os << "data.dim = " << data.dim << "\n";
    os << "data.noise = " << fmt_f64(data.noise) << "\n";
    os << "data.split_train = " << fmt_f64(data.split_train) << "\n";
    os << "data.split_val = " << fmt_f64(data.split_val) << "\n";
    os << "data.normalize = " << (data.normalize ? "true" : "false") << "\n";
    os << "data.seq_len = " << data.seq_len << "\n";
    os << "mode = " << train_mode_name(train.mode) << "\n";
    os << "variant = " << variant_name(train.variant) << "\n";
    os << "optimizer = " << optim_name(train.optimizer) << "\n";
    os << "lr = " << fmt_f64(train.lr) << "\n";
    os << "batch = " << train.batch << "\n";
    os << "epochs = " << epochs << "\n";
    os << "steps = " << steps << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << "\n";
    os << "beta1 = " << fmt_f64(train.beta1) << "\n";
    os << "beta2 = " << fmt_f64(train.beta2) << "\n";
    os << "eps = " << fmt_f64(train.eps) << "\n";
    os << "weight_decay = " << fmt_f64(train.weight_decay) << "\n";
    os << "warmup = " << train.warmup << "\n";
    os << "l1_lambda = " << fmt_f64(train.l1_lambda) << "\n";
    os << "dropout_p = " << fmt_f64(train.dropout_p) << "\n";
    os << "lora_r = " << train.lora_r << "\n";
    os << "lora_alpha = " << fmt_f64(train.lora_alpha) << "\n";
    os << "grad_log = " << (train.grad_log ? "true" : "false") << "\n";
    os << "avf.t_i = " << train.avf.t_i << "\n";
    os << "avf.t_f = " << train.avf.t_f << "\n";
    os << "avf.n_f = " << train.avf.n_f << "\n";
    os << "avf.k = " << train.avf.k << "\n";
    os << "avf.beta = " << fmt_f64(train.avf.beta) << "\n";
    os << "avf.release = " << (train.avf.release_after_last ? "true" : "false") << "\n";
    os << "source = " << source << "\n";
    os << "out = " << out_dir << "\n";
    os << "cells = ";
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << "\n";
    os << "jobs = " << jobs << "\n";
    return os.str();
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    ExperimentConfig c;
    c.seeds.clear();
    std::istringstream in(text);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string val = trim(stripped.substr(eq + 1));

        if (key == "model.arch") c.model.arch = arch_from_name(val);
        else if (key == "model.depth") c.model.depth = parse_i64(key, val);
        else if (key == "model.hidden") c.model.hidden = parse_i64(key, val);
        else if (key == "model.heads") c.model.heads = parse_i64(key, val);
        else if (key == "model.classes") c.model.classes = parse_i64(key, val);
        else if (key == "model.input_dim") c.model.input_dim = parse_i64(key, val);
        else if (key == "model.ffn") c.model.ffn = parse_i64(key, val);
        else if (key == "model.max_seq") c.model.max_seq = parse_i64(key, val);
        else if (key == "data.kind") c.data.kind = dataset_kind_from_name(val);
        else if (key == "data.path") c.data.path = val;
        else if (key == "data.n") c.data.n = parse_i64(key, val);
        else if (key == "data.classes") c.data.classes = parse_i64(key, val);
        else if (key == "data.dim") c.data.dim = parse_i64(key, val);
        else if (key == "data.noise") c.data.noise = parse_f64(key, val);
        else if (key == "data.split_train") c.data.split_train = parse_f64(key, val);
        else if (key == "data.split_val") c.data.split_val = parse_f64(key, val);
        else if (key == "data.normalize") c.data.normalize = parse_bool(key, val);
        else if (key == "data.seq_len") c.data.seq_len = parse_i64(key, val);
        else if (key == "mode") c.train.mode = train_mode_from_name(val);
        else if (key == "variant") c.train.variant = variant_from_name(val);
        else if (key == "optimizer") c.train.optimizer = optim_from_name(val);
        else if (key == "lr") c.train.lr = parse_f64(key, val);
        else if (key == "batch") c.train.batch = parse_i64(key, val);
        else if (key == "epochs") c.epochs = parse_i64(key, val);
        else if (key == "steps") c.steps = parse_i64(key, val);
        else if (key == "seeds") {
            for (const auto& s : split_list(val))
                c.seeds.push_back(static_cast<std::uint64_t>(parse_i64(key, s)));
        } else if (key == "beta1") c.train.beta1 = parse_f64(key, val);
        else if (key == "beta2") c.train.beta2 = parse_f64(key, val);
        else if (key == "eps") c.train.eps = parse_f64(key, val);
        else if (key == "weight_decay") c.train.weight_decay = parse_f64(key, val);
        else if (key == "warmup") c.train.warmup = parse_i64(key, val);
        else if (key == "l1_lambda") c.train.l1_lambda = parse_f64(key, val);
        else if (key == "dropout_p") c.train.dropout_p = parse_f64(key, val);
        else if (key == "lora_r") c.train.lora_r = parse_i64(key, val);
        else if (key == "lora_alpha") c.train.lora_alpha = parse_f64(key, val);
        else if (key == "grad_log") c.train.grad_log = parse_bool(key, val);
        else if (key == "avf.t_i") c.train.avf.t_i = parse_i64(key, val);
        else if (key == "avf.t_f") c.train.avf.t_f = parse_i64(key, val);
        else if (key == "avf.n_f") c.train.avf.n_f = parse_i64(key, val);
        else if (key == "avf.k") c.train.avf.k = parse_i64(key, val);
        else if (key == "avf.beta") c.train.avf.beta = parse_f64(key, val);
        else if (key == "avf.release") c.train.avf.release_after_last = parse_bool(key, val);
        else if (key == "source") c.source = val;
        else if (key == "out") c.out_dir = val;
        else if (key == "cells") c.cells = split_list(val);
        else if (key == "jobs") c.jobs = parse_i64(key, val);
        else
            throw ValidationError("config line " + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
    }
    if (c.seeds.empty()) c.seeds = {1};
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_text(read_text_file(path));
}

} // namespace specfit
