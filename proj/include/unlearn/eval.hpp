#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

struct SplitMetrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::int64_t tokens = 0;
    bool degenerate = false;  // no gold and no predicted entities
};

// Token-level micro-averaged P/R/F1 over entity classes. The outside class
// never counts as a positive: TP = correct entity tokens, FP = predicted
// entity with different gold, FN = gold entity predicted otherwise.
inline SplitMetrics token_micro_f1(const std::vector<int>& predictions, const std::vector<int>& golds,
                                   const std::vector<double>& mask, int outside_label) {
    if (predictions.size() != golds.size() || mask.size() != golds.size())
        throw ContractError("token_micro_f1: prediction/gold/mask lengths differ");
    std::int64_t tp = 0, fp = 0, fn = 0, tokens = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        if (mask[i] <= 0) continue;
        ++tokens;
        int p = predictions[i], g = golds[i];
        bool p_ent = p != outside_label, g_ent = g != outside_label;
        if (p_ent && g_ent && p == g) ++tp;
        else {
            if (p_ent) ++fp;
            if (g_ent) ++fn;
        }
    }
    SplitMetrics m;
    m.tokens = tokens;
    if (tp + fp == 0 && tp + fn == 0) {
        m.degenerate = true;  // documented convention: (0,0,0) with a flag
        return m;
    }
    m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1 = m.precision + m.recall == 0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

// ---------------------------------------------------------------------------
// Model / ensemble prediction surfaces
// ---------------------------------------------------------------------------

// SISA ensemble: non-overlapping shards, one member model per shard,
// soft-vote aggregation (mean of per-class softmax distributions).
struct SisaEnsemble {
    std::vector<ModelCheckpoint> members;
    std::vector<int> shard_of;  // sentence id -> shard index (original train split)
    std::vector<std::uint64_t> shard_seeds;
    int num_shards() const { return static_cast<int>(members.size()); }
};

// Per-token class distributions for one sentence, eval mode.
inline std::vector<std::vector<double>> predict_distribution(const ModelCheckpoint& ckpt,
                                                             const Sentence& s) {
    Rng rng(0);  // unused in eval mode
    Tensor z = encode_tokens(ckpt.config, ckpt.params, s.token_ids, false, rng, nullptr);
    Tensor logits = classify_tokens(ckpt.config, ckpt.params, z, nullptr);
    Tensor probs = softmax_rows(nullptr, logits);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(probs.rows()));
    for (std::int64_t i = 0; i < probs.rows(); ++i) {
        out[static_cast<std::size_t>(i)].assign(probs.vec().begin() + i * probs.cols(),
                                                probs.vec().begin() + (i + 1) * probs.cols());
    }
    return out;
}

inline std::vector<std::vector<double>> predict_distribution(const SisaEnsemble& ens,
                                                             const Sentence& s) {
    if (ens.members.empty()) throw ContractError("SisaEnsemble: no members");
    auto agg = predict_distribution(ens.members[0], s);
    for (std::size_t m = 1; m < ens.members.size(); ++m) {
        auto d = predict_distribution(ens.members[m], s);
        for (std::size_t i = 0; i < agg.size(); ++i)
            for (std::size_t c = 0; c < agg[i].size(); ++c) agg[i][c] += d[i][c];
    }
    for (auto& row : agg)
        for (auto& v : row) v /= static_cast<double>(ens.members.size());
    return agg;
}

template <typename Model>
std::vector<int> predict_sentence(const Model& model, const Sentence& s) {
    auto dist = predict_distribution(model, s);
    std::vector<int> out(dist.size());
    for (std::size_t i = 0; i < dist.size(); ++i) {
        int best = 0;
        for (std::size_t c = 1; c < dist[i].size(); ++c)
            if (dist[i][c] > dist[i][static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        out[i] = best;
    }
    return out;
}

// Eval-mode micro-F1 of a checkpoint or ensemble over a sentence list.
template <typename Model>
SplitMetrics evaluate_split(const Model& model, const std::vector<Sentence>& sentences,
                            int outside_label) {
    std::vector<int> preds, golds;
    std::vector<double> mask;
    for (const auto& s : sentences) {
        auto p = predict_sentence(model, s);
        preds.insert(preds.end(), p.begin(), p.end());
        golds.insert(golds.end(), s.labels.begin(), s.labels.end());
        mask.insert(mask.end(), s.length(), 1.0);
    }
    return token_micro_f1(preds, golds, mask, outside_label);
}

// Eq-2-style comparison against the exact-unlearning reference:
// agreement = fraction of tokens with equal argmax, TV = mean over tokens of
// half the L1 distance between the class distributions.
template <typename ModelA, typename ModelB>
std::pair<double, double> model_agreement(const ModelA& a, const ModelB& b,
                                          const std::vector<Sentence>& sentences) {
    std::int64_t tokens = 0, agree = 0;
    double tv_sum = 0;
    for (const auto& s : sentences) {
        auto da = predict_distribution(a, s);
        auto db = predict_distribution(b, s);
        if (!da.empty() && !db.empty() && da[0].size() != db[0].size())
            throw ContractError("model_agreement: label vocabularies differ");
        for (std::size_t i = 0; i < da.size(); ++i) {
            ++tokens;
            int aa = 0, ab = 0;
            double l1 = 0;
            for (std::size_t c = 0; c < da[i].size(); ++c) {
                if (da[i][c] > da[i][static_cast<std::size_t>(aa)]) aa = static_cast<int>(c);
                if (db[i][c] > db[i][static_cast<std::size_t>(ab)]) ab = static_cast<int>(c);
                l1 += std::abs(da[i][c] - db[i][c]);
            }
            if (aa == ab) ++agree;
            tv_sum += 0.5 * l1;
        }
    }
    if (tokens == 0) return {1.0, 0.0};
    return {static_cast<double>(agree) / static_cast<double>(tokens), tv_sum / static_cast<double>(tokens)};
}

// One (method, dataset, fraction, seed) cell of the benchmark grid.
struct MetricsReport {
    std::string method;
    double fraction = 0;
    std::uint64_t seed = 0;
    SplitMetrics retained, forget, test;
    double agreement = 1.0;
    double tv_distance = 0.0;
    double seconds = 0.0;
    std::int64_t steps = 0;
    bool failed = false;
    std::string error;
};

}  // namespace unlearn
