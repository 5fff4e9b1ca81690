#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "decompnet/model.hpp"
#include "decompnet/rank_select.hpp"

namespace fs = std::filesystem;
using namespace decompnet;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out, err;
};

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

const fs::path& work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "decompnet_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

CliResult run_cli(const std::string& args, const std::string& env = "") {
    const char* bin = std::getenv("DECOMPNET_CLI");
    REQUIRE_MESSAGE(bin != nullptr, "DECOMPNET_CLI must point at the built binary");
    const fs::path out = work_dir() / "stdout.txt";
    const fs::path err = work_dir() / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + bin + "\" " + args + " >" +
                            out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_all(out);
    r.err = read_all(err);
    return r;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

const std::string kConfig = R"({
  "dataset": {"type": "two_moons", "n": 64, "noise": 0.1, "dim": 4, "seed": 7},
  "model": {
    "input": {"channels": 4},
    "layers": [
      {"out_dim": 8, "activation": "relu"},
      {"out_dim": 2, "activation": "softmax"}
    ]
  },
  "train": {"epochs": 3, "batch_size": 16, "lambda": 0.5, "lr": 0.05,
            "probe_ratios": [0.5], "seed": 11}
})";

fs::path config_path() {
    const fs::path p = work_dir() / "config.json";
    write_text(p, kConfig);
    return p;
}

// Trains once and caches the checkpoint for the read-only tests below.
fs::path trained_model() {
    static const fs::path model = [] {
        const fs::path out = work_dir() / "train_a";
        const CliResult r = run_cli("train --config " + config_path().string() + " --out " +
                                    out.string());
        REQUIRE_MESSAGE(r.exit_code == 0, r.err);
        return out / "model.bin";
    }();
    return model;
}

} // namespace

TEST_CASE("cli: missing config file exits 2 with a diagnostic") {
    const CliResult r = run_cli("train --config /nonexistent/cfg.json");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("cli: unknown config key exits 2 and names the key") {
    const fs::path p = work_dir() / "bad_key.json";
    write_text(p, R"({"dataset": {"type": "two_moons"}, "model": {"input": {},
        "layers": [{"out_dim": 2, "activation": "softmax"}]}, "banana": 1})");
    const CliResult r = run_cli("train --config " + p.string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("banana") != std::string::npos);
}

TEST_CASE("cli: train writes a loadable checkpoint and a train log") {
    const fs::path model_path = trained_model();
    REQUIRE(fs::exists(model_path));
    REQUIRE(fs::exists(model_path.parent_path() / "train_log.csv"));

    std::string meta;
    const NetworkModel m = load_model(model_path.string(), &meta);
    CHECK(m.num_layers() == 2);
    CHECK(m.input.features() == 4);
    CHECK(meta.find("\"seed\":11") != std::string::npos);

    const std::string log = read_all(model_path.parent_path() / "train_log.csv");
    CHECK(log.rfind("epoch,lr,loss_full,loss_low,mean_z,", 0) == 0);
    // header + 3 epochs
    CHECK(std::count(log.begin(), log.end(), '\n') == 4);
}

TEST_CASE("cli: identical seeds give byte-identical artifacts") {
    trained_model();
    const fs::path out_b = work_dir() / "train_b";
    const CliResult r = run_cli("train --config " + config_path().string() + " --out " +
                                out_b.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    CHECK(read_all(trained_model()) == read_all(out_b / "model.bin"));
    CHECK(read_all(trained_model().parent_path() / "train_log.csv") ==
          read_all(out_b / "train_log.csv"));

    const fs::path out_c = work_dir() / "train_c";
    const CliResult r2 = run_cli("train --config " + config_path().string() + " --out " +
                                 out_c.string() + " --seed 12");
    REQUIRE_MESSAGE(r2.exit_code == 0, r2.err);
    CHECK(read_all(trained_model()) != read_all(out_c / "model.bin"));
}

TEST_CASE("cli: compress matches the library and z=1 keeps full ranks") {
    const fs::path model_path = trained_model();
    const NetworkModel m = load_model(model_path.string());

    const fs::path out = work_dir() / "compress_full";
    CliResult r = run_cli("compress --model " + model_path.string() +
                          " --budget z=1.0 --out " + out.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    RankAssignment a = RankAssignment::from_json(read_all(out / "assignment.json"));
    REQUIRE(a.ranks.size() == 2);
    CHECK(a.ranks[0] == m.layer_full_rank(0));
    CHECK(a.ranks[1] == m.layer_full_rank(1));

    r = run_cli("compress --model " + model_path.string() + " --budget z=0.5");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const RankAssignment expect = select(m, Criterion::sv, Budget::rank_ratio(0.5));
    a = RankAssignment::from_json(r.out.substr(0, r.out.find("\nparams,")));
    CHECK(a.ranks == expect.ranks);
    const auto [params, macs] = count_params_macs(m, expect.ranks);
    CHECK(r.out.find("params," + std::to_string(params) + "\n") != std::string::npos);
    CHECK(r.out.find("macs," + std::to_string(macs) + "\n") != std::string::npos);
}

TEST_CASE("cli: infeasible budget exits 2") {
    const CliResult r =
        run_cli("compress --model " + trained_model().string() + " --budget macs=1");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("cli: eval without a budget equals eval at z=1") {
    const std::string base = "eval --model " + trained_model().string() + " --config " +
                             config_path().string();
    const CliResult full = run_cli(base);
    const CliResult z1 = run_cli(base + " --budget z=1.0");
    REQUIRE_MESSAGE(full.exit_code == 0, full.err);
    REQUIRE_MESSAGE(z1.exit_code == 0, z1.err);
    CHECK(full.out == z1.out);
    CHECK(full.out.rfind("loss,accuracy\n", 0) == 0);
}

TEST_CASE("cli: sweep emits one row per budget") {
    const fs::path out = work_dir() / "sweep";
    const CliResult r = run_cli("sweep --model " + trained_model().string() + " --config " +
                                config_path().string() +
                                " --budget z=0.25 --budget z=0.5 --budget z=1.0 --out " +
                                out.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const std::string csv = read_all(out / "sweep.csv");
    CHECK(csv == r.out);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.rfind("criterion,budget_kind,budget_value,", 0) == 0);
}

TEST_CASE("cli: analyze prop2 reports zero bound violations") {
    const fs::path out = work_dir() / "analyze";
    const CliResult r = run_cli("analyze --model " + trained_model().string() + " --config " +
                                config_path().string() +
                                " --check prop2 --budget z=0.5 --out " + out.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    CHECK(r.out.rfind("violations,0\n", 0) == 0);
    CHECK(fs::exists(out / "analyze_prop2.csv"));
}

TEST_CASE("cli: inspect summarizes the checkpoint") {
    const CliResult r = run_cli("inspect --model " + trained_model().string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    CHECK(r.out.find("input: 4x1x1") != std::string::npos);
    CHECK(r.out.find("layer 0: dense 4x8 R=4") != std::string::npos);
    CHECK(r.out.find("full params,") != std::string::npos);
}

TEST_CASE("cli: stale lock file blocks a run") {
    const fs::path out = work_dir() / "locked";
    fs::create_directories(out);
    write_text(out / ".decompnet.lock", "");
    const CliResult r = run_cli("train --config " + config_path().string() + " --out " +
                                out.string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("locked") != std::string::npos);
}

TEST_CASE("cli: DECOMPNET_THREADS must be a positive integer") {
    const CliResult bad = run_cli("inspect --model " + trained_model().string(),
                                  "DECOMPNET_THREADS=banana");
    CHECK(bad.exit_code == 2);
    const CliResult good = run_cli("inspect --model " + trained_model().string(),
                                   "DECOMPNET_THREADS=4");
    CHECK(good.exit_code == 0);
}

TEST_CASE("cli: missing subcommand or bad flag exits 2") {
    CHECK(run_cli("").exit_code == 2);
    CHECK(run_cli("train --bogus-flag 1").exit_code == 2);
}
