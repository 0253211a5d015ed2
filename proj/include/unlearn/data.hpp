#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "unlearn/errors.hpp"
#include "unlearn/rng.hpp"

namespace unlearn {

struct Sentence {
    std::vector<std::string> tokens;
    std::vector<int> token_ids;  // filled by build_vocab_and_encode
    std::vector<int> labels;
    std::int64_t id = 0;

    std::size_t length() const { return tokens.size(); }
};

struct LabelVocab {
    std::vector<std::string> names;
    std::unordered_map<std::string, int> index;

    int add(const std::string& name) {
        auto it = index.find(name);
        if (it != index.end()) return it->second;
        int id = static_cast<int>(names.size());
        names.push_back(name);
        index.emplace(name, id);
        return id;
    }
    int size() const { return static_cast<int>(names.size()); }
    // Index of the outside tag, or -1 when the label set has none.
    int outside() const {
        auto it = index.find("O");
        return it == index.end() ? -1 : it->second;
    }
};

struct TokenVocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    std::vector<std::string> words{"<pad>", "<unk>"};
    std::unordered_map<std::string, int> index{{"<pad>", 0}, {"<unk>", 1}};

    int lookup(const std::string& w) const {
        auto it = index.find(w);
        return it == index.end() ? kUnk : it->second;
    }
    int size() const { return static_cast<int>(words.size()); }
};

struct TokenDataset {
    std::vector<Sentence> train, dev, test;
    LabelVocab labels;
    TokenVocab vocab;

    std::vector<Sentence>& split(const std::string& name) {
        if (name == "train") return train;
        if (name == "dev") return dev;
        if (name == "test") return test;
        throw ParameterError("TokenDataset: unknown split " + name);
    }
};

// Forget request: D_f as sentence ids, D_r implied as train \ D_f.
struct UnlearnRequest {
    std::set<std::int64_t> forget_ids;
    double fraction = 0.0;
    std::uint64_t selection_seed = 0;

    bool is_forgotten(std::int64_t id) const { return forget_ids.count(id) > 0; }
};

// ---------------------------------------------------------------------------
// CoNLL parsing: "token<whitespace>label" per line, blank line ends a sentence.
// ---------------------------------------------------------------------------

inline std::vector<Sentence> parse_conll_stream(std::istream& is, LabelVocab& labels,
                                                const std::string& origin = "<stream>") {
    std::vector<Sentence> out;
    Sentence cur;
    std::string line;
    std::int64_t line_no = 0, next_id = 0;
    auto flush = [&] {
        if (!cur.tokens.empty()) {
            cur.id = next_id++;
            out.push_back(std::move(cur));
            cur = Sentence{};
        }
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok, lab, extra;
        if (!(ls >> tok)) {  // blank line: sentence boundary (runs collapse)
            flush();
            continue;
        }
        if (!(ls >> lab) || (ls >> extra))
            throw DataError(origin + ": line " + std::to_string(line_no) +
                            ": expected exactly two whitespace-separated fields");
        cur.tokens.push_back(tok);
        cur.labels.push_back(labels.add(lab));
    }
    flush();
    return out;
}

inline std::vector<Sentence> parse_conll(const std::string& path, LabelVocab& labels) {
    std::ifstream is(path);
    if (!is) throw DataError("parse_conll: cannot open " + path);
    return parse_conll_stream(is, labels, path);
}

inline void write_conll(const std::vector<Sentence>& sentences, const LabelVocab& labels,
                        std::ostream& os) {
    for (const auto& s : sentences) {
        for (std::size_t i = 0; i < s.tokens.size(); ++i)
            os << s.tokens[i] << " " << labels.names[static_cast<std::size_t>(s.labels[i])] << "\n";
        os << "\n";
    }
}

inline void write_conll(const std::vector<Sentence>& sentences, const LabelVocab& labels,
                        const std::string& path) {
    std::ofstream os(path);
    if (!os) throw PersistenceError("write_conll: cannot open " + path);
    write_conll(sentences, labels, os);
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::int64_t num_train = 200;
    std::int64_t num_dev = 50;
    std::int64_t num_test = 50;
    int num_classes = 4;      // total classes including O
    int vocab_size = 2000;    // distinct surface forms to draw from
    double mean_len = 12.0;
    double entity_rate = 0.3;   // probability a position carries an entity token
    double label_noise = 0.0;   // probability an entity token's label is re-drawn
    int triggers_per_class = 40;
};

// Each entity class owns a disjoint trigger-word set, so the clean task is
// learnable by construction; label_noise injects per-token memorization
// targets that only a model trained on the split can predict.
inline TokenDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.num_train <= 0 || spec.num_dev <= 0 || spec.num_test <= 0)
        throw ParameterError("generate_synthetic: split sizes must be positive");
    if (spec.num_classes < 2) throw ParameterError("generate_synthetic: num_classes must be >= 2");
    if (spec.mean_len < 3.0) throw ParameterError("generate_synthetic: mean_len must be >= 3");
    if (spec.vocab_size < spec.num_classes * spec.triggers_per_class + 10)
        throw ParameterError("generate_synthetic: vocab_size too small for trigger sets");

    TokenDataset ds;
    ds.labels.add("O");
    for (int c = 1; c < spec.num_classes; ++c) ds.labels.add("ENT-" + std::to_string(c));

    Rng rng(seed);
    int entity_classes = spec.num_classes - 1;
    auto gen_split = [&](std::int64_t count, std::int64_t tag) {
        Rng r = rng.derive(tag);
        std::vector<Sentence> out;
        out.reserve(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) {
            Sentence s;
            s.id = i;
            int len = std::max(3, r.poisson(spec.mean_len));
            for (int j = 0; j < len; ++j) {
                if (r.bernoulli(spec.entity_rate)) {
                    int c = 1 + static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(entity_classes)));
                    int trig = static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(spec.triggers_per_class)));
                    s.tokens.push_back("c" + std::to_string(c) + "t" + std::to_string(trig));
                    int label = c;
                    if (spec.label_noise > 0 && entity_classes > 1 && r.bernoulli(spec.label_noise)) {
                        int alt = 1 + static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(entity_classes - 1)));
                        label = alt >= c ? alt + 1 : alt;
                    }
                    s.labels.push_back(label);
                } else {
                    int filler = static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(spec.vocab_size)));
                    s.tokens.push_back("w" + std::to_string(filler));
                    s.labels.push_back(0);
                }
            }
            out.push_back(std::move(s));
        }
        return out;
    };
    ds.train = gen_split(spec.num_train, 1);
    ds.dev = gen_split(spec.num_dev, 2);
    ds.test = gen_split(spec.num_test, 3);
    return ds;
}

// ---------------------------------------------------------------------------
// Vocabulary and encoding
// ---------------------------------------------------------------------------

// Vocabulary built from the training split only; dev/test unknowns map to
// <unk> so unlearning can never change the vocabulary.
inline void build_vocab_and_encode(TokenDataset& ds, int min_count = 1) {
    if (ds.train.empty()) throw DataError("build_vocab_and_encode: empty training split");
    std::map<std::string, int> counts;
    for (const auto& s : ds.train)
        for (const auto& t : s.tokens) counts[t]++;
    for (const auto& [word, n] : counts) {
        if (n < min_count) continue;
        int id = static_cast<int>(ds.vocab.words.size());
        ds.vocab.words.push_back(word);
        ds.vocab.index.emplace(word, id);
    }
    for (auto* split : {&ds.train, &ds.dev, &ds.test})
        for (auto& s : *split) {
            s.token_ids.clear();
            s.token_ids.reserve(s.tokens.size());
            for (const auto& t : s.tokens) s.token_ids.push_back(ds.vocab.lookup(t));
        }
}

// ---------------------------------------------------------------------------
// Forget-request selection and batching
// ---------------------------------------------------------------------------

// Uniform sample without replacement of floor(fraction * N) sentence ids.
inline UnlearnRequest select_forget(const TokenDataset& ds, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw ParameterError("select_forget: fraction must lie in (0,1)");
    std::int64_t n = static_cast<std::int64_t>(ds.train.size());
    std::int64_t k = static_cast<std::int64_t>(fraction * static_cast<double>(n));
    if (k == 0) throw ParameterError("select_forget: floor(fraction*N) is zero, nothing to forget");
    std::vector<std::int64_t> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (const auto& s : ds.train) ids.push_back(s.id);
    Rng rng(seed);
    rng.shuffle(ids);
    UnlearnRequest req;
    req.fraction = fraction;
    req.selection_seed = seed;
    req.forget_ids.insert(ids.begin(), ids.begin() + k);
    return req;
}

struct Batch {
    std::int64_t size = 0;      // sentences
    std::int64_t max_len = 0;   // padded length
    std::vector<int> token_ids;  // [size x max_len], pad = 0
    std::vector<int> labels;     // [size x max_len]
    std::vector<double> mask;    // 1 at real tokens, 0 at padding
    std::vector<std::int64_t> sentence_ids;

    std::int64_t true_len(std::int64_t row) const {
        std::int64_t l = 0;
        while (l < max_len && mask[row * max_len + l] > 0) ++l;
        return l;
    }
};

inline std::vector<Batch> make_batches(const std::vector<Sentence>& split, std::int64_t batch_size,
                                       std::uint64_t shuffle_seed, bool shuffle = true) {
    if (batch_size < 1) throw ParameterError("make_batches: batch_size must be >= 1");
    std::vector<const Sentence*> order;
    order.reserve(split.size());
    for (const auto& s : split) order.push_back(&s);
    if (shuffle) {
        Rng rng(shuffle_seed);
        rng.shuffle(order);
    }
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        Batch b;
        b.size = static_cast<std::int64_t>(end - start);
        for (std::size_t i = start; i < end; ++i)
            b.max_len = std::max(b.max_len, static_cast<std::int64_t>(order[i]->length()));
        b.token_ids.assign(static_cast<std::size_t>(b.size * b.max_len), 0);
        b.labels.assign(static_cast<std::size_t>(b.size * b.max_len), 0);
        b.mask.assign(static_cast<std::size_t>(b.size * b.max_len), 0.0);
        for (std::size_t i = start; i < end; ++i) {
            const Sentence& s = *order[i];
            std::int64_t row = static_cast<std::int64_t>(i - start);
            b.sentence_ids.push_back(s.id);
            for (std::size_t j = 0; j < s.length(); ++j) {
                b.token_ids[row * b.max_len + static_cast<std::int64_t>(j)] = s.token_ids[j];
                b.labels[row * b.max_len + static_cast<std::int64_t>(j)] = s.labels[j];
                b.mask[row * b.max_len + static_cast<std::int64_t>(j)] = 1.0;
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

// Clip sentences to the model's length bound; encode_tokens treats
// over-length input as a contract violation.
inline void truncate_sentences(TokenDataset& ds, std::int64_t max_len) {
    if (max_len < 1) throw ParameterError("truncate_sentences: max_len must be >= 1");
    for (auto* split : {&ds.train, &ds.dev, &ds.test})
        for (auto& s : *split)
            if (static_cast<std::int64_t>(s.length()) > max_len) {
                s.tokens.resize(static_cast<std::size_t>(max_len));
                s.labels.resize(static_cast<std::size_t>(max_len));
                if (!s.token_ids.empty()) s.token_ids.resize(static_cast<std::size_t>(max_len));
            }
}

// Retained-set view of the training split under a request.
inline std::vector<Sentence> retained_sentences(const TokenDataset& ds, const UnlearnRequest& req) {
    std::vector<Sentence> out;
    for (const auto& s : ds.train)
        if (!req.is_forgotten(s.id)) out.push_back(s);
    return out;
}

inline std::vector<Sentence> forget_sentences(const TokenDataset& ds, const UnlearnRequest& req) {
    std::vector<Sentence> out;
    for (const auto& s : ds.train)
        if (req.is_forgotten(s.id)) out.push_back(s);
    return out;
}

}  // namespace unlearn
