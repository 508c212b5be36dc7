#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "specfit/commands.hpp"
#include "testutil.hpp"

using namespace specfit;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
    const std::string dir = "/tmp/specfit_cli_tests/" + name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ExperimentConfig blobs_config(const std::string& out) {
    ExperimentConfig cfg;
    cfg.model.arch = Arch::mlp;
    cfg.model.depth = 2;
    cfg.model.hidden = 16;
    cfg.model.classes = 0; // resolved from the dataset
    cfg.data.kind = DatasetKind::synthetic_blobs;
    cfg.data.n = 256;
    cfg.data.classes = 3;
    cfg.data.dim = 2;
    cfg.data.noise = 0.2;
    cfg.train.lr = 5e-3;
    cfg.train.batch = 32;
    cfg.steps = 300;
    cfg.epochs = 0;
    cfg.seeds = {1};
    cfg.out_dir = out;
    return cfg;
}

std::string file_text(const std::string& path) { return read_text_file(path); }

std::uint64_t file_hash(const std::string& path) {
    const std::string t = file_text(path);
    return testutil::fnv1a(t.data(), t.size());
}

double summary_value(const std::string& path, const std::string& key) {
    std::istringstream in(file_text(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos && line.substr(0, eq) == key)
            return std::stod(line.substr(eq + 3));
    }
    throw std::runtime_error("missing key " + key + " in " + path);
}

} // namespace

TEST_CASE("config round-trips through its canonical text form") {
    ExperimentConfig cfg;
    cfg.model.arch = Arch::transformer;
    cfg.model.depth = 3;
    cfg.model.hidden = 48;
    cfg.model.heads = 6;
    cfg.model.classes = 128;
    cfg.model.max_seq = 48;
    cfg.data.kind = DatasetKind::char_lm;
    cfg.data.path = "data/corpus_a.txt";
    cfg.data.seq_len = 24;
    cfg.train.mode = TrainMode::spectral;
    cfg.train.variant = Variant::full_avf;
    cfg.train.lr = 1.5e-3;
    cfg.train.avf.t_i = 123;
    cfg.train.avf.t_f = 17;
    cfg.train.avf.n_f = 4;
    cfg.train.avf.k = 5;
    cfg.train.avf.beta = 0.97;
    cfg.seeds = {3, 5, 9};
    cfg.cells = {"full_avf", "random_freeze"};
    cfg.out_dir = "runs/x";
    cfg.source = "runs/pre/pretrained.sfck";
    cfg.jobs = 2;

    auto back = ExperimentConfig::from_text(cfg.to_text());
    CHECK(back == cfg);
}

TEST_CASE("config parser rejects unknown keys and malformed values") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_text("nonsense = 3\n"),
                         doctest::Contains("nonsense"), ValidationError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("lr = abc\n"), ValidationError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("this line has no equals\n"), ValidationError);
    auto ok = ExperimentConfig::from_text("# comment only\n\nlr = 0.5\n");
    CHECK(ok.train.lr == 0.5);

    ExperimentConfig bad_split;
    bad_split.data.split_train = 0.5;
    bad_split.data.split_val = 0.3;
    CHECK_THROWS_AS(bad_split.validate(), ValidationError);

    ExperimentConfig no_seeds;
    no_seeds.seeds.clear();
    CHECK_THROWS_AS(no_seeds.validate(), ValidationError);
}

TEST_CASE("csv classification loader handles labels and rejects bad rows") {
    const std::string dir = tmp_dir("csv");
    const std::string path = dir + "/data.csv";
    {
        std::ofstream os(path);
        os << "x1,x2,label\n";
        os << "0.5,1.5,cat\n";
        os << "-1.0,2.0,dog\n";
        os << "0.25,0.75,cat\n";
        os << "3.5,-2.5,bird\n";
    }
    DatasetDescriptor dd;
    dd.kind = DatasetKind::csv_classification;
    dd.path = path;
    auto data = build_classification(dd, 1);
    CHECK(data.dim == 2);
    CHECK(data.classes == 3);
    CHECK(data.size() == 4);
    CHECK(data.y[0] == 0); // first-appearance label ids
    CHECK(data.y[1] == 1);
    CHECK(data.y[2] == 0);

    {
        std::ofstream os(path, std::ios::app);
        os << "not,enough\n";
    }
    CHECK_THROWS_WITH_AS(build_classification(dd, 1), doctest::Contains("line"),
                         ValidationError);

    dd.path = dir + "/missing.csv";
    CHECK_THROWS_AS(build_classification(dd, 1), IoError);
}

TEST_CASE("bundled corpora load into the byte-level alphabet") {
    const char* data_env = std::getenv("SPECFIT_DATA");
    REQUIRE(data_env != nullptr);
    DatasetDescriptor dd;
    dd.kind = DatasetKind::char_lm;
    dd.path = std::string(data_env) + "/corpus_a.txt";
    dd.seq_len = 32;
    auto corpus = build_char_lm(dd, 1);
    CHECK(corpus.vocab == 128);
    CHECK(static_cast<std::int64_t>(corpus.tokens.size()) > 4000);
    CHECK(corpus.train_end < static_cast<std::int64_t>(corpus.tokens.size()));
    for (auto t : corpus.tokens) {
        CHECK(t >= 0);
        CHECK(t < 128);
    }
}

TEST_CASE("pretrain reaches high accuracy on blobs and is reproducible") {
    const std::string out = tmp_dir("pretrain");
    auto cfg = blobs_config(out);
    auto s = cmd_pretrain(cfg);
    CHECK(s.eval_accuracy >= 0.95);
    CHECK(fs::exists(out + "/pretrained.sfck"));
    CHECK(fs::exists(out + "/history.csv"));
    CHECK(fs::exists(out + "/summary.txt"));

    const auto h1 = file_hash(out + "/pretrained.sfck");
    cmd_pretrain(cfg); // idempotent re-run overwrites deterministically
    CHECK(file_hash(out + "/pretrained.sfck") == h1);

    auto missing = cfg;
    missing.data.kind = DatasetKind::csv_classification;
    missing.data.path = "/tmp/definitely_missing.csv";
    CHECK_THROWS_AS(cmd_pretrain(missing), IoError);
}

TEST_CASE("finetune emits its artifacts and cross-checks the counters") {
    const std::string pre_out = tmp_dir("ft_pre");
    auto pre_cfg = blobs_config(pre_out);
    cmd_pretrain(pre_cfg);

    const std::string out = tmp_dir("ft_run");
    auto cfg = blobs_config(out);
    cfg.source = pre_out + "/pretrained.sfck";
    cfg.steps = 120;
    cfg.train.mode = TrainMode::spectral;
    cfg.train.variant = Variant::full_avf;
    cfg.train.avf.t_i = 30;
    cfg.train.avf.t_f = 20;
    cfg.train.avf.n_f = 3;
    cfg.train.avf.k = 1;
    auto s = cmd_finetune(cfg);

    for (const char* f : {"init.sfck", "final.sfck", "history.csv", "registry.csv", "summary.txt"})
        CHECK(fs::exists(out + "/" + f));

    // The reported fraction matches the two counters.
    const double frac = summary_value(out + "/summary.txt", "trainable_fraction");
    const double trainable = summary_value(out + "/summary.txt", "trainable");
    const double total = summary_value(out + "/summary.txt", "total_params");
    CHECK(frac == doctest::Approx(trainable / total).epsilon(1e-12));

    // k = 0 schedule is exactly the no-freezing variant.
    auto cfg_k0 = cfg;
    cfg_k0.out_dir = tmp_dir("ft_k0");
    cfg_k0.train.avf.k = 0;
    auto s_k0 = cmd_finetune(cfg_k0);
    auto cfg_plain = cfg;
    cfg_plain.out_dir = tmp_dir("ft_plain");
    cfg_plain.train.variant = Variant::full_no_avf;
    cfg_plain.train.avf = AvfConfig{};
    auto s_plain = cmd_finetune(cfg_plain);
    CHECK(s_k0.final_loss == s_plain.final_loss);
    CHECK(s_k0.eval_loss == s_plain.eval_loss);

    // Mode conflicts are validation errors.
    auto bad = cfg;
    bad.train.mode = TrainMode::full_ft;
    CHECK_THROWS_AS(cmd_finetune(bad), ValidationError);
}

TEST_CASE("analyze writes the four csv schemas from run artifacts") {
    const std::string pre_out = tmp_dir("an_pre");
    cmd_pretrain(blobs_config(pre_out));

    const std::string out = tmp_dir("an_run");
    auto cfg = blobs_config(out);
    cfg.source = pre_out + "/pretrained.sfck";
    cfg.steps = 80;
    cfg.train.mode = TrainMode::lora;
    cfg.train.lora_r = 2;
    cmd_finetune(cfg);

    const std::string rep = tmp_dir("an_rep");
    AnalyzeArgs args{out + "/init.sfck", out + "/final.sfck", out, rep};
    cmd_analyze(args);

    auto first_line = [](const std::string& path) {
        std::istringstream in(file_text(path));
        std::string line;
        std::getline(in, line);
        return line;
    };
    CHECK(first_line(rep + "/spectrum.csv") == "layer,module,index,sigma");
    CHECK(first_line(rep + "/strength.csv") == "step,layer,module,kind,S,S_ema,frozen");
    CHECK(first_line(rep + "/variation.csv") == "layer,module,index,delta_sigma");
    CHECK(first_line(rep + "/ledger.csv") == "layer,module,kind,total,frozen_sum,applied");

    // The adapter run's spectra never exceed rank 2.
    auto spec_rep = delta_spectrum(Checkpoint::load(args.init_path),
                                   Checkpoint::load(args.final_path));
    for (const auto& row : spec_rep.rows) CHECK(row.eff_rank <= 2);

    AnalyzeArgs mismatched{pre_out + "/pretrained.sfck", out + "/final.sfck", "", rep};
    CHECK_THROWS_AS(cmd_analyze(mismatched), ValidationError);
}

TEST_CASE("ablate runs the grid, orders counts, and records failures per cell") {
    const std::string pre_out = tmp_dir("ab_pre");
    cmd_pretrain(blobs_config(pre_out));

    const std::string out = tmp_dir("ab_run");
    auto cfg = blobs_config(out);
    cfg.source = pre_out + "/pretrained.sfck";
    cfg.steps = 60;
    cfg.seeds = {1, 1}; // identical seeds give zero std
    cfg.cells = {"sigma", "full_no_avf", "lora"};
    cfg.train.lora_r = 5000; // invalid on purpose: the lora cell must fail
    auto rows = cmd_ablate(cfg);
    REQUIRE(rows.size() == 6);
    CHECK(fs::exists(out + "/ablation.csv"));

    // Cell-major layout: rows 0,1 sigma; 2,3 full_no_avf; 4,5 lora.
    CHECK(rows[0].status == "ok");
    CHECK(rows[2].status == "ok");
    CHECK(rows[0].final_loss == rows[1].final_loss); // identical seeds
    CHECK(rows[4].status != "ok");                   // failure recorded, table still emitted

    const std::string table = file_text(out + "/ablation.csv");
    CHECK(table.find("lora") != std::string::npos);
    CHECK(table.find("failed") != std::string::npos);

    // Single cell, single seed reproduces the plain finetune summary.
    auto single = cfg;
    single.out_dir = tmp_dir("ab_single");
    single.seeds = {1};
    single.cells = {"sigma"};
    auto srows = cmd_ablate(single);
    REQUIRE(srows.size() == 1);
    auto direct = cfg;
    direct.out_dir = tmp_dir("ab_direct");
    direct.train.mode = TrainMode::spectral;
    direct.train.variant = Variant::sigma;
    direct.train.avf = AvfConfig{};
    direct.seeds = {1};
    auto ds = cmd_finetune(direct);
    CHECK(srows[0].final_loss == ds.final_loss);
    CHECK(srows[0].trainable == ds.trainable);
}

TEST_CASE("ablation parameter counts follow the variant ordering") {
    const std::string pre_out = tmp_dir("ord_pre");
    cmd_pretrain(blobs_config(pre_out));
    const std::string out = tmp_dir("ord_run");
    auto cfg = blobs_config(out);
    cfg.source = pre_out + "/pretrained.sfck";
    cfg.steps = 10;
    cfg.cells = {"sigma_a", "sigma", "sigma_a_plus_b", "full_no_avf", "full_avf"};
    cfg.train.avf.t_i = 2;
    cfg.train.avf.t_f = 2;
    cfg.train.avf.n_f = 2;
    cfg.train.avf.k = 1;
    auto rows = cmd_ablate(cfg);
    REQUIRE(rows.size() == 5);
    // On an MLP there are no attention matrices: sigma_a trains nothing and
    // fails its freeze step; the grid records that and carries on.
    CHECK(rows[0].status != "ok");
    CHECK(rows[1].trainable < rows[2].trainable);
    CHECK(rows[2].trainable < rows[3].trainable);
    CHECK(rows[3].trainable == rows[4].trainable);
}

TEST_CASE("the cli binary wires commands, overrides, and exit codes") {
    const char* bin = std::getenv("SPECFIT_BIN");
    REQUIRE(bin != nullptr);
    const std::string dir = tmp_dir("bin");
    const std::string config_path = dir + "/exp.cfg";
    {
        auto cfg = blobs_config(dir + "/pre");
        cfg.steps = 200;
        std::ofstream os(config_path);
        os << cfg.to_text();
    }
    auto run = [&](const std::string& args) {
        const std::string cmd = std::string(bin) + " " + args + " > " + dir +
                                "/stdout.txt 2> " + dir + "/stderr.txt";
        const int rc = std::system(cmd.c_str());
        return WEXITSTATUS(rc);
    };
    CHECK(run("pretrain --config " + config_path) == 0);
    CHECK(fs::exists(dir + "/pre/pretrained.sfck"));

    CHECK(run("finetune --config " + config_path + " --source " + dir +
              "/pre/pretrained.sfck --out " + dir + "/ft --mode spectral --variant full_no_avf"
              " --steps 40 --seed 2") == 0);
    CHECK(fs::exists(dir + "/ft/final.sfck"));

    CHECK(run("analyze --init " + dir + "/ft/init.sfck --final " + dir +
              "/ft/final.sfck --history " + dir + "/ft --out " + dir + "/rep") == 0);
    CHECK(fs::exists(dir + "/rep/spectrum.csv"));

    // Exit code taxonomy: missing file -> 2, bad config value -> 1.
    CHECK(run("finetune --config " + config_path + " --source /tmp/nope.sfck --out " + dir +
              "/bad") == 2);
    {
        std::ofstream os(config_path, std::ios::app);
        os << "lr = -4\n";
    }
    CHECK(run("pretrain --config " + config_path) == 1);
}
