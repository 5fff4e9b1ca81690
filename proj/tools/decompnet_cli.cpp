#include "decompnet/analysis.hpp"
#include "decompnet/dataset.hpp"
#include "decompnet/model.hpp"
#include "decompnet/rank_select.hpp"
#include "decompnet/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace decompnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ParseError("config: unknown key '" + it.key() + "' in " + where);
}

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("config: cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("config: " + path + ": " + e.what());
    }
}

// Validated worker-count cap; the current implementation runs a single
// worker, so any positive value satisfies it.
std::size_t thread_cap() {
    const char* env = std::getenv("DECOMPNET_THREADS");
    if (!env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1)
        throw ParseError("DECOMPNET_THREADS must be a positive integer, got '" +
                         std::string(env) + "'");
    return static_cast<std::size_t>(v);
}

// Exclusive lock on the output directory; prevents two commands from
// clobbering each other's artifacts.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : lock_path_(dir / ".decompnet.lock") {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(lock_path_.string().c_str(), "wx");
        if (!f)
            throw InvalidInputError("output directory '" + dir.string() +
                                    "' is locked by another run (remove " +
                                    lock_path_.string() + " if stale)");
        std::fclose(f);
    }
    ~OutputLock() {
        std::error_code ec;
        fs::remove(lock_path_, ec);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path lock_path_;
};

NetworkModel model_from_config(const json& cfg) {
    reject_unknown_keys(cfg, {"input", "layers"}, "model");
    NetworkModel model;
    const json& jin = cfg.at("input");
    reject_unknown_keys(jin, {"channels", "height", "width"}, "model.input");
    model.input.channels = jin.value("channels", std::size_t{1});
    model.input.height = jin.value("height", std::size_t{1});
    model.input.width = jin.value("width", std::size_t{1});
    for (const json& jl : cfg.at("layers")) {
        reject_unknown_keys(jl,
                            {"kind", "activation", "bias", "batchnorm", "in_dim", "out_dim",
                             "k_h", "k_w", "c_out", "stride", "decomposition"},
                            "model.layers[]");
        LayerSpec spec;
        const std::string kind = jl.value("kind", std::string("dense"));
        if (kind == "dense") {
            spec.kind = LayerKind::dense;
            spec.in_dim = jl.value("in_dim", std::size_t{0});
            spec.out_dim = jl.at("out_dim").get<std::size_t>();
        } else if (kind == "conv") {
            spec.kind = LayerKind::conv;
            spec.conv.k_h = jl.at("k_h").get<std::size_t>();
            spec.conv.k_w = jl.at("k_w").get<std::size_t>();
            spec.conv.c_out = jl.at("c_out").get<std::size_t>();
            spec.conv.stride = jl.value("stride", std::size_t{1});
            const std::string dec = jl.value("decomposition", std::string("channel"));
            if (dec == "channel")
                spec.decomposition = ConvDecomposition::channel;
            else if (dec == "spatial")
                spec.decomposition = ConvDecomposition::spatial;
            else
                throw ParseError("config: unknown decomposition '" + dec + "'");
        } else {
            throw ParseError("config: unknown layer kind '" + kind + "'");
        }
        const std::string act = jl.value("activation", std::string("relu"));
        if (act == "relu")
            spec.activation = Activation::relu;
        else if (act == "identity")
            spec.activation = Activation::identity;
        else if (act == "softmax")
            spec.activation = Activation::softmax_output;
        else
            throw ParseError("config: unknown activation '" + act + "'");
        spec.has_bias = jl.value("bias", true);
        spec.has_batchnorm = jl.value("batchnorm", false);
        model.layers.push_back(spec);
    }
    model.finalize();
    return model;
}

Dataset dataset_from_config(const json& cfg) {
    reject_unknown_keys(cfg,
                        {"type", "n", "noise", "dim", "seed", "classes", "spread", "images",
                         "labels", "path", "standardize"},
                        "dataset");
    const std::string type = cfg.at("type").get<std::string>();
    Dataset data;
    if (type == "two_moons") {
        data = make_two_moons(cfg.value("n", std::size_t{400}), cfg.value("noise", 0.1),
                              cfg.value("dim", std::size_t{2}),
                              cfg.value("seed", std::uint64_t{0}));
    } else if (type == "blobs") {
        data = make_blobs(cfg.value("n", std::size_t{400}), cfg.value("classes", std::size_t{3}),
                          cfg.value("dim", std::size_t{2}), cfg.value("spread", 1.0),
                          cfg.value("seed", std::uint64_t{0}));
    } else if (type == "idx") {
        data = load_idx(cfg.at("images").get<std::string>(),
                        cfg.at("labels").get<std::string>());
    } else if (type == "csv") {
        data = load_csv(cfg.at("path").get<std::string>());
    } else {
        throw ParseError("config: unknown dataset type '" + type + "'");
    }
    if (cfg.value("standardize", true)) standardize(data);
    return data;
}

TrainConfig train_config_from_json(const json& cfg) {
    reject_unknown_keys(cfg,
                        {"lambda", "alpha_l", "alpha_u", "eta", "batch_size", "epochs", "lr",
                         "lr_decay", "milestone_fractions", "momentum", "criterion", "seed",
                         "probe_ratios", "rebalance"},
                        "train");
    TrainConfig tc;
    tc.lambda = cfg.value("lambda", tc.lambda);
    tc.alpha_l = cfg.value("alpha_l", tc.alpha_l);
    tc.alpha_u = cfg.value("alpha_u", tc.alpha_u);
    tc.eta = cfg.value("eta", tc.eta);
    tc.batch_size = cfg.value("batch_size", tc.batch_size);
    tc.epochs = cfg.value("epochs", tc.epochs);
    tc.lr = cfg.value("lr", tc.lr);
    tc.lr_decay = cfg.value("lr_decay", tc.lr_decay);
    if (cfg.contains("milestone_fractions"))
        tc.milestone_fractions = cfg.at("milestone_fractions").get<std::vector<double>>();
    tc.momentum = cfg.value("momentum", tc.momentum);
    if (cfg.contains("criterion"))
        tc.criterion = criterion_from_name(cfg.at("criterion").get<std::string>());
    tc.seed = cfg.value("seed", tc.seed);
    if (cfg.contains("probe_ratios"))
        tc.probe_ratios = cfg.at("probe_ratios").get<std::vector<double>>();
    tc.rebalance = cfg.value("rebalance", tc.rebalance);
    return tc;
}

Budget parse_budget(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos)
        throw ParseError("budget: expected z=<ratio>, params=<count>, or macs=<count>, got '" +
                         text + "'");
    const std::string key = text.substr(0, eq);
    const std::string val = text.substr(eq + 1);
    try {
        if (key == "z") return Budget::rank_ratio(std::stod(val));
        if (key == "params") return Budget::params(std::stoull(val));
        if (key == "macs") return Budget::macs(std::stoull(val));
    } catch (const std::exception&) {
        throw ParseError("budget: bad value in '" + text + "'");
    }
    throw ParseError("budget: unknown kind '" + key + "'");
}

std::vector<std::size_t> full_ranks(const NetworkModel& model) {
    std::vector<std::size_t> r;
    for (std::size_t l = 0; l < model.num_layers(); ++l) r.push_back(model.layer_full_rank(l));
    return r;
}

std::vector<std::size_t> ranks_for(const NetworkModel& model, Criterion criterion,
                                   const std::optional<Budget>& budget) {
    if (!budget || (budget->kind == BudgetKind::rank_ratio && budget->z == 1.0))
        return full_ranks(model);
    return select(model, criterion, *budget).ranks;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInputError("cannot open '" + path.string() + "' for writing");
    out << content;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              std::optional<std::string> out_override,
              std::optional<std::string> criterion_override, std::size_t checkpoint_every) {
    const json cfg = load_config_file(config_path);
    reject_unknown_keys(cfg, {"dataset", "model", "train", "out"}, "config");
    NetworkModel model = model_from_config(cfg.at("model"));
    const Dataset data = dataset_from_config(cfg.at("dataset"));
    TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
    if (seed) tc.seed = *seed;
    if (criterion_override) tc.criterion = criterion_from_name(*criterion_override);
    const std::string out_dir =
        out_override ? *out_override : cfg.value("out", std::string("out"));

    OutputLock lock{fs::path(out_dir)};
    EpochCallback on_epoch;
    if (checkpoint_every > 0)
        on_epoch = [&](std::size_t epoch, const NetworkModel& m, const TrainLog&) {
            if ((epoch + 1) % checkpoint_every == 0)
                save_model(m, (fs::path(out_dir) /
                               ("checkpoint_epoch_" + std::to_string(epoch) + ".bin"))
                                  .string());
        };
    const TrainLog log = train(model, data, tc, nullptr, on_epoch);

    json meta;
    meta["seed"] = tc.seed;
    meta["lambda"] = tc.lambda;
    meta["alpha_l"] = tc.alpha_l;
    meta["alpha_u"] = tc.alpha_u;
    meta["eta"] = tc.eta;
    meta["epochs"] = tc.epochs;
    meta["criterion"] = criterion_name(tc.criterion);
    save_model(model, (fs::path(out_dir) / "model.bin").string(), meta.dump());
    write_file(fs::path(out_dir) / "train_log.csv", log.to_csv());
    std::cout << "wrote " << (fs::path(out_dir) / "model.bin").string() << " and train_log.csv"
              << std::endl;
    return kExitOk;
}

int cmd_compress(const std::string& model_path, const std::string& criterion_name_in,
                 const std::string& budget_text, std::optional<std::string> out_dir) {
    const NetworkModel model = load_model(model_path);
    const Criterion criterion = criterion_from_name(criterion_name_in);
    const Budget budget = parse_budget(budget_text);
    const RankAssignment assignment = select(model, criterion, budget);
    const auto [params, macs] = count_params_macs(model, assignment.ranks);

    std::cout << assignment.to_json() << "\n";
    std::cout << "params," << params << "\n";
    std::cout << "macs," << macs << std::endl;
    if (out_dir) {
        OutputLock lock{fs::path(*out_dir)};
        write_file(fs::path(*out_dir) / "assignment.json", assignment.to_json() + "\n");
    }
    return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& config_path,
             const std::string& criterion_name_in, std::optional<std::string> budget_text) {
    const NetworkModel model = load_model(model_path);
    const json cfg = load_config_file(config_path);
    reject_unknown_keys(cfg, {"dataset", "model", "train", "out"}, "config");
    const Dataset data = dataset_from_config(cfg.at("dataset"));
    std::optional<Budget> budget;
    if (budget_text) budget = parse_budget(*budget_text);
    const auto ranks = ranks_for(model, criterion_from_name(criterion_name_in), budget);
    const auto [loss, acc] = evaluate(model, ranks, data);
    std::cout << "loss,accuracy\n";
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", loss, acc);
    std::cout << buf;
    return kExitOk;
}

int cmd_sweep(const std::string& model_path, const std::string& config_path,
              const std::string& criterion_name_in, const std::vector<std::string>& budget_texts,
              std::optional<std::string> out_dir) {
    const NetworkModel model = load_model(model_path);
    const json cfg = load_config_file(config_path);
    reject_unknown_keys(cfg, {"dataset", "model", "train", "out"}, "config");
    const Dataset data = dataset_from_config(cfg.at("dataset"));
    std::vector<Budget> budgets;
    for (const std::string& t : budget_texts) budgets.push_back(parse_budget(t));
    const TradeoffReport rep =
        tradeoff_sweep(model, budgets, data, criterion_from_name(criterion_name_in));
    std::cout << rep.to_csv();
    if (out_dir) {
        OutputLock lock{fs::path(*out_dir)};
        write_file(fs::path(*out_dir) / "sweep.csv", rep.to_csv());
    }
    return kExitOk;
}

int cmd_analyze(const std::string& model_path, const std::string& config_path,
                const std::string& check, const std::string& criterion_name_in,
                std::optional<std::string> budget_text, std::optional<std::string> out_dir) {
    const NetworkModel model = load_model(model_path);
    const json cfg = load_config_file(config_path);
    reject_unknown_keys(cfg, {"dataset", "model", "train", "out"}, "config");
    const Dataset data = dataset_from_config(cfg.at("dataset"));
    std::optional<Budget> budget;
    if (budget_text) budget = parse_budget(*budget_text);
    const auto ranks = ranks_for(model, criterion_from_name(criterion_name_in), budget);

    std::string csv;
    if (check == "prop1") {
        csv = check_prop1(model, data.features).to_csv();
    } else if (check == "prop2") {
        const auto samples = check_prop2(model, ranks, data.features);
        std::ostringstream os;
        os << "sample,kl,bound,slack\n";
        std::size_t violations = 0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            char buf[120];
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", i, samples[i].kl,
                          samples[i].bound, samples[i].slack);
            os << buf;
            if (samples[i].slack < 0.0) ++violations;
        }
        csv = os.str();
        std::cout << "violations," << violations << "\n";
    } else if (check == "lipschitz") {
        csv = lipschitz_report(model, ranks, data).to_csv();
    } else {
        throw ParseError("analyze: unknown check '" + check +
                         "' (expected prop1, prop2, lipschitz)");
    }
    std::cout << csv;
    if (out_dir) {
        OutputLock lock{fs::path(*out_dir)};
        write_file(fs::path(*out_dir) / ("analyze_" + check + ".csv"), csv);
    }
    return kExitOk;
}

int cmd_inspect(const std::string& model_path) {
    std::string meta;
    const NetworkModel model = load_model(model_path, &meta);
    std::cout << "meta: " << meta << "\n";
    std::cout << "input: " << model.input.channels << "x" << model.input.height << "x"
              << model.input.width << "\n";
    const auto sv = layer_singular_values(model);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const DenseMatrix dec = model.decomposition_matrix(l);
        std::cout << "layer " << l << ": "
                  << (model.layers[l].kind == LayerKind::dense ? "dense" : "conv") << " "
                  << dec.rows() << "x" << dec.cols() << " R=" << sv[l].size()
                  << " sigma_max=" << sv[l].front() << " sigma_min=" << sv[l].back() << "\n";
    }
    const auto [params, macs] = count_params_macs(model, full_ranks(model));
    std::cout << "full params," << params << "\n";
    std::cout << "full macs," << macs << std::endl;
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decomposable network trainer: every weight matrix can be truncated to any "
                 "rank after training"};
    app.require_subcommand(1);

    std::string config_path, model_path, criterion = "sv", check = "prop2";
    std::optional<std::string> out_dir, budget_text, train_criterion;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> budget_list;
    std::size_t checkpoint_every = 0;

    CLI::App* train_cmd = app.add_subcommand("train", "Train a model from a config file");
    train_cmd->add_option("--config", config_path, "JSON config")->required();
    train_cmd->add_option("--seed", seed, "Override train.seed");
    train_cmd->add_option("--out", out_dir, "Override output directory");
    train_cmd->add_option("--criterion", train_criterion, "Override train.criterion")
        ->check(CLI::IsMember({"sv", "energy", "uniform"}));
    train_cmd->add_option("--checkpoint-every", checkpoint_every,
                          "Write a checkpoint every N epochs (0 = final only)");

    CLI::App* compress_cmd = app.add_subcommand("compress", "Select ranks under a budget");
    compress_cmd->add_option("--model", model_path, "Checkpoint path")->required();
    compress_cmd->add_option("--criterion", criterion, "sv|energy|uniform");
    compress_cmd->add_option("--budget", budget_text, "z=|params=|macs=")->required();
    compress_cmd->add_option("--out", out_dir, "Directory for assignment.json");

    CLI::App* eval_cmd = app.add_subcommand("eval", "Loss/accuracy at a budget");
    eval_cmd->add_option("--model", model_path, "Checkpoint path")->required();
    eval_cmd->add_option("--config", config_path, "Config with a dataset section")->required();
    eval_cmd->add_option("--criterion", criterion, "sv|energy|uniform");
    eval_cmd->add_option("--budget", budget_text, "z=|params=|macs= (default: full rank)");

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "Accuracy/size tradeoff over budgets");
    sweep_cmd->add_option("--model", model_path, "Checkpoint path")->required();
    sweep_cmd->add_option("--config", config_path, "Config with a dataset section")->required();
    sweep_cmd->add_option("--criterion", criterion, "sv|energy|uniform");
    sweep_cmd->add_option("--budget", budget_list, "Repeatable: z=|params=|macs=")->required();
    sweep_cmd->add_option("--out", out_dir, "Directory for sweep.csv");

    CLI::App* analyze_cmd = app.add_subcommand("analyze", "Run a mathematical check");
    analyze_cmd->add_option("--model", model_path, "Checkpoint path")->required();
    analyze_cmd->add_option("--config", config_path, "Config with a dataset section")
        ->required();
    analyze_cmd->add_option("--check", check, "prop1|prop2|lipschitz")->required();
    analyze_cmd->add_option("--criterion", criterion, "sv|energy|uniform");
    analyze_cmd->add_option("--budget", budget_text, "Budget for the truncated model");
    analyze_cmd->add_option("--out", out_dir, "Directory for the CSV");

    CLI::App* inspect_cmd = app.add_subcommand("inspect", "Summarize a checkpoint");
    inspect_cmd->add_option("--model", model_path, "Checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        thread_cap();
        if (train_cmd->parsed())
            return cmd_train(config_path, seed, out_dir, train_criterion, checkpoint_every);
        if (compress_cmd->parsed())
            return cmd_compress(model_path, criterion, *budget_text, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(model_path, config_path, criterion, budget_text);
        if (sweep_cmd->parsed())
            return cmd_sweep(model_path, config_path, criterion, budget_list, out_dir);
        if (analyze_cmd->parsed())
            return cmd_analyze(model_path, config_path, check, criterion, budget_text, out_dir);
        if (inspect_cmd->parsed()) return cmd_inspect(model_path);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const InvalidInputError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitRuntime;
    }
    return kExitUsage;
}
