// Command-line entry point: data generation, training, unlearning,
// evaluation and the full benchmark grid, driven by a flat key=value config
// with flag overrides.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unlearn/bench.hpp"
#include "unlearn/config.hpp"
#include "unlearn/data.hpp"
#include "unlearn/engines.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/model.hpp"

namespace {

using namespace unlearn;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct FlagTable {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;

    // Registers --key style flags that override config-file entries.
    void attach(CLI::App* cmd, const std::vector<std::string>& keys) {
        cmd->add_option("--config", config_file, "flat key=value config file");
        for (const auto& key : keys) {
            std::string dashed = "--" + key;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            std::string names = dashed == "--" + key ? dashed : dashed + ",--" + key;
            cmd->add_option_function<std::string>(
                names, [this, key](const std::string& v) { overrides.emplace_back(key, v); },
                "override config key " + key);
        }
    }

    RunConfig resolve() const { return load_config(config_file, overrides); }
};

// Loads the dataset named by the config: CoNLL files when given, otherwise
// the synthetic generator. Encodes, truncates, and fills model dims.
TokenDataset load_dataset(RunConfig& rc) {
    TokenDataset ds;
    if (!rc.train_file.empty()) {
        if (rc.dev_file.empty() || rc.test_file.empty())
            throw ConfigError("train_file given but dev_file/test_file missing");
        ds.train = parse_conll(rc.train_file, ds.labels);
        ds.dev = parse_conll(rc.dev_file, ds.labels);
        ds.test = parse_conll(rc.test_file, ds.labels);
        if (ds.train.empty()) std::cerr << "warning: empty training split in " << rc.train_file << "\n";
    } else {
        ds = generate_synthetic(rc.synthetic, rc.data_seed);
    }
    build_vocab_and_encode(ds);
    truncate_sentences(ds, rc.model.max_len);
    rc.model.vocab_size = ds.vocab.size();
    rc.model.num_classes = ds.labels.size();
    return ds;
}

nlohmann::json provenance_json(const RunConfig& rc) {
    nlohmann::json j;
    j["train_file"] = rc.train_file;
    j["dev_file"] = rc.dev_file;
    j["test_file"] = rc.test_file;
    j["preset"] = rc.preset;
    j["num_train"] = rc.synthetic.num_train;
    j["num_dev"] = rc.synthetic.num_dev;
    j["num_test"] = rc.synthetic.num_test;
    j["num_classes"] = rc.synthetic.num_classes;
    j["gen_vocab_size"] = rc.synthetic.vocab_size;
    j["mean_len"] = rc.synthetic.mean_len;
    j["entity_rate"] = rc.synthetic.entity_rate;
    j["label_noise"] = rc.synthetic.label_noise;
    j["data_seed"] = rc.data_seed;
    j["hidden_dim"] = rc.model.hidden_dim;
    j["num_layers"] = rc.model.num_layers;
    j["num_heads"] = rc.model.num_heads;
    j["max_len"] = rc.model.max_len;
    j["dropout"] = rc.model.dropout_rate;
    j["batch_size"] = rc.train.batch_size;
    j["lr"] = rc.train.base_lr;
    j["unlearn_lr"] = rc.train.unlearn_lr;
    j["warmup_steps"] = rc.train.warmup_steps;
    j["unlearn_warmup"] = rc.train.unlearn_warmup;
    j["epochs"] = rc.train.epochs;
    j["unlearn_epochs"] = rc.train.unlearn_epochs;
    j["seed"] = rc.train.seed;
    j["tau"] = rc.train.tau;
    j["gamma"] = rc.train.gamma;
    j["forget_batch_size"] = rc.train.forget_batch_size;
    j["revgrad_weight"] = rc.train.revgrad_weight;
    j["sisa_shards"] = rc.train.sisa_shards;
    j["weight_decay"] = rc.train.weight_decay;
    j["methods"] = rc.methods;
    j["fractions"] = rc.fractions;
    j["seeds"] = rc.seeds;
    j["fraction"] = rc.fraction;
    j["method"] = rc.method;
    j["out_dir"] = rc.out_dir;
    j["checkpoint"] = rc.checkpoint_path;
    return j;
}

nlohmann::json split_json(const SplitMetrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall},   {"micro_f1", m.f1},
            {"tokens", m.tokens},       {"degenerate", m.degenerate}};
}

int cmd_gen_data(const FlagTable& flags) {
    RunConfig rc = flags.resolve();
    TokenDataset ds = generate_synthetic(rc.synthetic, rc.data_seed);
    std::filesystem::create_directories(rc.out_dir);
    write_conll(ds.train, ds.labels, rc.out_dir + "/train.conll");
    write_conll(ds.dev, ds.labels, rc.out_dir + "/dev.conll");
    write_conll(ds.test, ds.labels, rc.out_dir + "/test.conll");
    std::cout << "wrote " << ds.train.size() << "/" << ds.dev.size() << "/" << ds.test.size()
              << " sentences to " << rc.out_dir << "\n";
    return kExitOk;
}

int cmd_train(const FlagTable& flags) {
    RunConfig rc = flags.resolve();
    if (rc.checkpoint_path.empty()) rc.checkpoint_path = rc.out_dir + "/model.ckpt";
    TokenDataset ds = load_dataset(rc);
    TrainResult r = train_model(ds, rc.model, rc.train, &std::cout);
    std::filesystem::create_directories(std::filesystem::path(rc.checkpoint_path).parent_path().empty()
                                            ? "."
                                            : std::filesystem::path(rc.checkpoint_path).parent_path().string());
    checkpoint_save(r.checkpoint, rc.checkpoint_path);
    std::cout << "saved checkpoint to " << rc.checkpoint_path << " after " << r.steps << " steps\n";
    return kExitOk;
}

int cmd_unlearn(const FlagTable& flags) {
    RunConfig rc = flags.resolve();
    bool needs_ckpt = rc.method != "retrain" && rc.method != "sisa";
    if (needs_ckpt && rc.checkpoint_path.empty())
        throw ConfigError("unlearn --method " + rc.method +
                          " requires a trained checkpoint (set checkpoint=...)");
    TokenDataset ds = load_dataset(rc);
    UnlearnRequest req = select_forget(ds, rc.fraction, rc.train.seed);
    UnlearnOutcome out;
    if (rc.method == "retrain") {
        out = unlearn_retrain(ds, req, rc.model, rc.train, &std::cout);
    } else if (rc.method == "sisa") {
        SisaEnsemble ens = sisa_train(ds, static_cast<int>(rc.train.sisa_shards), rc.model, rc.train);
        out = sisa_unlearn(ens, ds, req, rc.model, rc.train, &std::cout);
    } else {
        ModelCheckpoint m = checkpoint_load(rc.checkpoint_path);
        if (m.config.num_classes != rc.model.num_classes || m.config.vocab_size != rc.model.vocab_size)
            throw DataError("checkpoint was trained on a different dataset (vocab/classes mismatch)");
        rc.model = m.config;
        if (rc.method == "finetune") out = unlearn_finetune(m, ds, req, rc.train, &std::cout);
        else if (rc.method == "revgrad") out = unlearn_reverse_gradient(m, ds, req, rc.train, &std::cout);
        else if (rc.method == "deepcut") out = unlearn_deepcut(m, ds, req, rc.train, &std::cout);
        else throw ConfigError("unknown method '" + rc.method + "'");
    }
    std::filesystem::create_directories(rc.out_dir);
    nlohmann::json report;
    report["config"] = provenance_json(rc);
    report["method"] = out.method;
    report["seconds"] = out.seconds;
    report["steps"] = out.steps;
    int outside = ds.labels.outside();
    if (out.ensemble) {
        for (std::size_t k = 0; k < out.ensemble->members.size(); ++k)
            checkpoint_save(out.ensemble->members[k],
                            rc.out_dir + "/unlearned_sisa_shard" + std::to_string(k) + ".ckpt");
        report["forget"] = split_json(evaluate_split(*out.ensemble, forget_sentences(ds, req), outside));
        report["retained"] = split_json(evaluate_split(*out.ensemble, retained_sentences(ds, req), outside));
        report["test"] = split_json(evaluate_split(*out.ensemble, ds.test, outside));
    } else {
        checkpoint_save(out.model, rc.out_dir + "/unlearned_" + out.method + ".ckpt");
        report["forget"] = split_json(evaluate_split(out.model, forget_sentences(ds, req), outside));
        report["retained"] = split_json(evaluate_split(out.model, retained_sentences(ds, req), outside));
        report["test"] = split_json(evaluate_split(out.model, ds.test, outside));
    }
    std::ofstream os(rc.out_dir + "/unlearn_report.json");
    os << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_eval(const FlagTable& flags) {
    RunConfig rc = flags.resolve();
    if (rc.checkpoint_path.empty())
        throw ConfigError("eval requires a checkpoint (set checkpoint=...)");
    TokenDataset ds = load_dataset(rc);
    ModelCheckpoint m = checkpoint_load(rc.checkpoint_path);
    int outside = ds.labels.outside();
    nlohmann::json j;
    j["train"] = split_json(evaluate_split(m, ds.train, outside));
    j["dev"] = split_json(evaluate_split(m, ds.dev, outside));
    j["test"] = split_json(evaluate_split(m, ds.test, outside));
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_bench(const FlagTable& flags) {
    RunConfig rc = flags.resolve();
    TokenDataset ds = load_dataset(rc);
    BenchmarkConfig bc;
    bc.methods = rc.methods;
    bc.fractions = rc.fractions;
    bc.seeds = rc.seeds;
    bc.model = rc.model;
    bc.train = rc.train;
    BenchmarkResult result = run_benchmark(ds, bc, &std::cout);
    result.provenance = provenance_json(rc);
    emit_reports(result, rc.out_dir);
    std::cout << "wrote results.json, table.csv, timing.tsv to " << rc.out_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-classification unlearning testbed"};
    app.require_subcommand(1);

    std::vector<std::string> common_keys = {
        "train_file", "dev_file", "test_file", "preset", "num_train", "num_dev", "num_test",
        "num_classes", "gen_vocab_size", "mean_len", "entity_rate", "label_noise", "data_seed",
        "hidden_dim", "num_layers", "num_heads", "max_len", "dropout", "batch_size", "lr",
        "unlearn_lr", "warmup_steps", "unlearn_warmup", "epochs", "unlearn_epochs", "seed", "tau",
        "gamma", "forget_batch_size", "revgrad_weight", "sisa_shards", "weight_decay", "methods",
        "fractions", "seeds", "fraction", "method", "out_dir", "checkpoint"};

    FlagTable gen_flags, train_flags, unlearn_flags, eval_flags, bench_flags;
    gen_flags.attach(app.add_subcommand("gen-data", "generate a synthetic CoNLL corpus"), common_keys);
    train_flags.attach(app.add_subcommand("train", "train the original model"), common_keys);
    unlearn_flags.attach(app.add_subcommand("unlearn", "apply one unlearning method"), common_keys);
    eval_flags.attach(app.add_subcommand("eval", "evaluate a checkpoint on all splits"), common_keys);
    bench_flags.attach(app.add_subcommand("bench", "run the full method x fraction x seed grid"),
                       common_keys);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_flags);
        if (app.got_subcommand("train")) return cmd_train(train_flags);
        if (app.got_subcommand("unlearn")) return cmd_unlearn(unlearn_flags);
        if (app.got_subcommand("eval")) return cmd_eval(eval_flags);
        if (app.got_subcommand("bench")) return cmd_bench(bench_flags);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
