#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "slvm/cli.hpp"
#include "slvm/eval.hpp"
#include "slvm/train.hpp"

using namespace slvm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

}  // namespace

TEST_CASE("synth is byte-identical across invocations") {
    TempDir tmp("slvm_cli_synth");
    auto args = [&](const std::string& out) {
        return std::vector<std::string>{"synth", "--out", tmp / out, "--n", "8", "--seed", "7",
                                        "--min-frames", "300", "--max-frames", "500"};
    };
    CHECK(cli::run_cli(args("a")) == 0);
    CHECK(cli::run_cli(args("b")) == 0);
    for (const auto& entry : fs::directory_iterator(tmp / "a")) {
        const auto name = entry.path().filename().string();
        if (name == "config.resolved") continue;
        CHECK(slurp(entry.path()) == slurp(fs::path(tmp / "b") / name));
    }
    // synth does not mutate its own inputs and corpora load back
    auto corpus = cli::load_corpus(tmp / "a");
    CHECK(corpus.size() == 8);
    CHECK(corpus[0].bit_depth == 16);
    CHECK(!corpus[0].labels.empty());
}

TEST_CASE("uniform baseline reports exactly the bit depth") {
    TempDir tmp("slvm_cli_uniform");
    REQUIRE(cli::run_cli({"synth", "--out", tmp / "corpus", "--n", "3", "--seed", "1", "--min-frames",
                          "200", "--max-frames", "300"}) == 0);
    REQUIRE(cli::run_cli({"eval", "--data", tmp / "corpus", "--baseline", "uniform", "--out",
                          tmp / "eval"}) == 0);
    auto rows = eval::read_report_csv(tmp / "eval/report.csv");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].bpf == 16.0);
    CHECK(rows[0].model == "Uniform");

    // 8-bit corpus reads 8.00
    REQUIRE(cli::run_cli({"synth", "--out", tmp / "corpus8", "--n", "2", "--seed", "2", "--min-frames",
                          "150", "--max-frames", "200", "--bit-depth", "8"}) == 0);
    REQUIRE(cli::run_cli({"eval", "--data", tmp / "corpus8", "--baseline", "uniform", "--out",
                          tmp / "eval8"}) == 0);
    CHECK(eval::read_report_csv(tmp / "eval8/report.csv")[0].bpf == 8.0);
}

TEST_CASE("unknown flags are rejected with the config error code") {
    TempDir tmp("slvm_cli_badflag");
    CHECK(cli::run_cli({"synth", "--out", tmp / "x", "--definitely-not-a-flag", "3"}) == 2);
    CHECK(cli::run_cli({"eval", "--data", tmp / "nowhere", "--out", tmp / "y"}) == 2);  // missing source
}

TEST_CASE("training run is reproducible from its resolved config") {
    TempDir tmp("slvm_cli_resolved");
    REQUIRE(cli::run_cli({"synth", "--out", tmp / "corpus", "--n", "4", "--seed", "5", "--min-frames",
                          "250", "--max-frames", "400"}) == 0);
    auto train_args = std::vector<std::string>{
        "train",   "--data", tmp / "corpus", "--out",   tmp / "run1", "--model",     "vrnn",
        "--stack", "32",     "--dz",         "4",       "--dd",       "8",           "--mlp-hidden",
        "8",       "--mixture", "2",         "--steps", "10",         "--val-frac",  "0.25",
        "--seed",  "9",      "--log-every",  "2",       "--batch",    "2"};
    REQUIRE(cli::run_cli(train_args) == 0);
    // rerun purely from the resolved config
    REQUIRE(cli::run_cli({"--config", tmp / "run1/config.resolved", "train", "--out", tmp / "run2"}) == 0);
    CHECK(slurp(tmp / "run1/metrics.csv") == slurp(tmp / "run2/metrics.csv"));
    CHECK(slurp(tmp / "run1/checkpoint.slvm") == slurp(tmp / "run2/checkpoint.slvm"));
}

TEST_CASE("eval on a checkpoint reproduces the logged validation bpf") {
    TempDir tmp("slvm_cli_traineval");
    REQUIRE(cli::run_cli({"synth", "--out", tmp / "corpus", "--n", "4", "--seed", "3", "--min-frames",
                          "200", "--max-frames", "320"}) == 0);
    // hold the last sequence out as validation via a separate corpus
    auto all = cli::load_corpus(tmp / "corpus");
    std::vector<audio::EncodedSequence> val(all.end() - 1, all.end());
    cli::write_corpus(tmp / "val", val);
    std::vector<audio::EncodedSequence> head(all.begin(), all.end() - 1);
    cli::write_corpus(tmp / "trainset", head);

    REQUIRE(cli::run_cli({"train", "--data", tmp / "trainset", "--val-data", tmp / "val", "--out",
                          tmp / "run", "--model", "vrnn", "--stack", "32", "--dz", "4", "--dd", "8",
                          "--mlp-hidden", "8", "--mixture", "2", "--steps", "6", "--val-every", "6",
                          "--seed", "11"}) == 0);
    auto logs = train::read_metrics_csv(tmp / "run/metrics.csv");
    double final_val_bpf = -1.0;
    for (const auto& l : logs) {
        if (l.split == "val") final_val_bpf = l.bpf;
    }
    REQUIRE(final_val_bpf > 0.0);

    // same seed and data: identical to the train-time validation pass
    const uint64_t eval_seed = 11ull ^ 0xe4a1ull;
    REQUIRE(cli::run_cli({"eval", "--data", tmp / "val", "--checkpoint", tmp / "run/checkpoint.slvm",
                          "--out", tmp / "eval", "--seed", std::to_string(eval_seed)}) == 0);
    auto rows = eval::read_report_csv(tmp / "eval/report.csv");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].bpf == doctest::Approx(final_val_bpf).epsilon(1e-9));

    // a different one-sample seed wiggles the estimate only slightly
    REQUIRE(cli::run_cli({"eval", "--data", tmp / "val", "--checkpoint", tmp / "run/checkpoint.slvm",
                          "--out", tmp / "eval2", "--seed", "12345"}) == 0);
    auto rows2 = eval::read_report_csv(tmp / "eval2/report.csv");
    CHECK(std::abs(rows2[0].bpf - final_val_bpf) < 0.5);
}

TEST_CASE("report merges tables and tags constants") {
    TempDir tmp("slvm_cli_report");
    eval::write_report_csv(tmp / "a.csv", {{"64", "lstm", "Dz=8 L=1", 14.5, "computed"}});
    eval::write_report_csv(tmp / "b.csv", {{"64", "vrnn", "Dz=8 L=1", 13.2, "computed"}});
    REQUIRE(cli::run_cli({"report", "--inputs", tmp / "a.csv", tmp / "b.csv", "--out", tmp / "m.csv",
                          "--flac-bpf", "8.582"}) == 0);
    auto rows = eval::read_report_csv(tmp / "m.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[2].model == "FLAC");
    CHECK(rows[2].source == "constant:flac");
    CHECK(rows[2].bpf == doctest::Approx(8.582));
}
