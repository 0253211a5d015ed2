#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/engines.hpp"
#include "unlearn/errors.hpp"

namespace unlearn {

// Fully resolved run configuration: defaults < config file < flag overrides.
struct RunConfig {
    // dataset source: either three CoNLL paths or a synthetic spec/preset
    std::string train_file, dev_file, test_file;
    std::string preset;  // wnut16-scale | wnut17-scale | ncbi-scale | chemu-scale
    SyntheticSpec synthetic;
    std::uint64_t data_seed = 0;

    ModelConfig model{.vocab_size = 0, .max_len = 64, .hidden_dim = 64, .num_layers = 2,
                      .num_heads = 4, .dropout_rate = 0.1, .num_classes = 0};
    TrainConfig train;

    std::vector<std::string> methods{"retrain", "finetune", "revgrad", "sisa", "deepcut"};
    std::vector<double> fractions{0.01, 0.10};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double fraction = 0.10;      // single-run unlearn command
    std::string method = "deepcut";
    std::string out_dir = "out";
    std::string checkpoint_path;

    std::map<std::string, std::string> resolved;  // provenance echo
};

namespace detail {

inline const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "train_file", "dev_file", "test_file", "preset", "num_train", "num_dev", "num_test",
        "num_classes", "gen_vocab_size", "mean_len", "entity_rate", "label_noise", "data_seed",
        "hidden_dim", "num_layers", "num_heads", "max_len", "dropout", "batch_size", "lr",
        "unlearn_lr", "warmup_steps", "unlearn_warmup", "epochs", "unlearn_epochs", "seed", "tau",
        "temperature", "gamma", "forget_batch_size", "revgrad_weight", "sisa_shards", "weight_decay", "methods",
        "fractions", "seeds", "fraction", "method", "out_dir", "checkpoint"};
    return keys;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline std::string suggest_key(const std::string& key) {
    std::string best;
    std::size_t best_d = key.size();
    for (const auto& k : known_config_keys()) {
        std::size_t d = edit_distance(key, k);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best_d <= 3 ? best : "";
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T v{};
    char trailing;
    if (!(is >> v) || is >> trailing)
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
    std::vector<T> out;
    std::istringstream is(value);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(parse_number<T>(key, item));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

inline std::vector<std::string> parse_string_list(const std::string& value) {
    std::vector<std::string> out;
    std::istringstream is(value);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace detail

// Table-scale presets for the synthetic generator.
inline SyntheticSpec preset_spec(const std::string& name) {
    SyntheticSpec s;
    s.vocab_size = 4000;
    s.label_noise = 0.3;
    if (name == "wnut16-scale") {
        s.num_train = 2394; s.num_dev = 1000; s.num_test = 3849; s.num_classes = 10;
    } else if (name == "wnut17-scale") {
        s.num_train = 3394; s.num_dev = 1009; s.num_test = 1287; s.num_classes = 6;
    } else if (name == "ncbi-scale") {
        s.num_train = 5424; s.num_dev = 923; s.num_test = 940; s.num_classes = 2;
    } else if (name == "chemu-scale") {
        s.num_train = 5911; s.num_dev = 1402; s.num_test = 2363; s.num_classes = 10;
    } else {
        throw ConfigError("unknown preset '" + name +
                          "' (expected wnut16-scale, wnut17-scale, ncbi-scale or chemu-scale)");
    }
    return s;
}

inline void apply_config_entry(RunConfig& rc, const std::string& key, const std::string& value) {
    using detail::parse_list;
    using detail::parse_number;
    const auto& known = detail::known_config_keys();
    if (std::find(known.begin(), known.end(), key) == known.end()) {
        std::string hint = detail::suggest_key(key);
        throw ConfigError("unknown config key '" + key + "'" +
                          (hint.empty() ? "" : " (did you mean '" + hint + "'?)"));
    }
    if (key == "train_file") rc.train_file = value;
    else if (key == "dev_file") rc.dev_file = value;
    else if (key == "test_file") rc.test_file = value;
    else if (key == "preset") { rc.preset = value; rc.synthetic = preset_spec(value); }
    else if (key == "num_train") rc.synthetic.num_train = parse_number<std::int64_t>(key, value);
    else if (key == "num_dev") rc.synthetic.num_dev = parse_number<std::int64_t>(key, value);
    else if (key == "num_test") rc.synthetic.num_test = parse_number<std::int64_t>(key, value);
    else if (key == "num_classes") rc.synthetic.num_classes = parse_number<int>(key, value);
    else if (key == "gen_vocab_size") rc.synthetic.vocab_size = parse_number<int>(key, value);
    else if (key == "mean_len") rc.synthetic.mean_len = parse_number<double>(key, value);
    else if (key == "entity_rate") rc.synthetic.entity_rate = parse_number<double>(key, value);
    else if (key == "label_noise") rc.synthetic.label_noise = parse_number<double>(key, value);
    else if (key == "data_seed") rc.data_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "hidden_dim") rc.model.hidden_dim = parse_number<std::int64_t>(key, value);
    else if (key == "num_layers") rc.model.num_layers = parse_number<std::int64_t>(key, value);
    else if (key == "num_heads") rc.model.num_heads = parse_number<std::int64_t>(key, value);
    else if (key == "max_len") rc.model.max_len = parse_number<std::int64_t>(key, value);
    else if (key == "dropout") rc.model.dropout_rate = parse_number<double>(key, value);
    else if (key == "batch_size") rc.train.batch_size = parse_number<std::int64_t>(key, value);
    else if (key == "lr") rc.train.base_lr = parse_number<double>(key, value);
    else if (key == "unlearn_lr") rc.train.unlearn_lr = parse_number<double>(key, value);
    else if (key == "warmup_steps") rc.train.warmup_steps = parse_number<std::int64_t>(key, value);
    else if (key == "unlearn_warmup") rc.train.unlearn_warmup = parse_number<std::int64_t>(key, value);
    else if (key == "epochs") rc.train.epochs = parse_number<std::int64_t>(key, value);
    else if (key == "unlearn_epochs") rc.train.unlearn_epochs = parse_number<std::int64_t>(key, value);
    else if (key == "seed") rc.train.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "tau" || key == "temperature") rc.train.tau = parse_number<double>(key, value);
    else if (key == "gamma") rc.train.gamma = parse_number<double>(key, value);
    else if (key == "forget_batch_size") rc.train.forget_batch_size = parse_number<std::int64_t>(key, value);
    else if (key == "revgrad_weight") rc.train.revgrad_weight = parse_number<double>(key, value);
    else if (key == "sisa_shards") rc.train.sisa_shards = parse_number<std::int64_t>(key, value);
    else if (key == "weight_decay") rc.train.weight_decay = parse_number<double>(key, value);
    else if (key == "methods") rc.methods = detail::parse_string_list(value);
    else if (key == "fractions") rc.fractions = parse_list<double>(key, value);
    else if (key == "seeds") rc.seeds = parse_list<std::uint64_t>(key, value);
    else if (key == "fraction") rc.fraction = parse_number<double>(key, value);
    else if (key == "method") rc.method = value;
    else if (key == "out_dir") rc.out_dir = value;
    else if (key == "checkpoint") rc.checkpoint_path = value;
    rc.resolved[key] = value;
}

// Flat key=value file; '#' starts a comment, blank lines skipped.
inline void load_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_entry(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

// Precedence: defaults < config file < overrides (e.g. command-line flags).
inline RunConfig load_config(const std::string& file_path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig rc;
    const char* env_out = std::getenv("UNLEARN_OUT_DIR");
    if (env_out && *env_out) rc.out_dir = env_out;
    if (!file_path.empty()) load_config_file(rc, file_path);
    for (const auto& [k, v] : overrides) apply_config_entry(rc, k, v);
    return rc;
}

}  // namespace unlearn
