#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/model.hpp"
#include "unlearn/objectives.hpp"
#include "unlearn/optim.hpp"

namespace unlearn {

struct TrainConfig {
    std::int64_t batch_size = 32;
    double base_lr = 1e-3;       // from-scratch training of the small encoder
    double unlearn_lr = 2e-5;    // continued fine-tuning of an existing checkpoint
    std::int64_t warmup_steps = 200;
    std::int64_t unlearn_warmup = 0;
    std::int64_t epochs = 15;           // from-scratch budget (train/retrain/sisa shards)
    std::int64_t unlearn_epochs = 5;    // budget for finetune/revgrad/deepcut
    std::uint64_t seed = 0;
    double tau = 0.1;
    double gamma = 0.3;
    std::int64_t forget_batch_size = 0;  // 0: max(1, round(batch_size * |D_f| / N))
    double revgrad_weight = 1.0;
    std::int64_t sisa_shards = 5;
    double weight_decay = 0.0;

    void validate() const {
        if (batch_size < 1 || forget_batch_size < 0) throw ParameterError("TrainConfig: batch sizes must be >= 1");
        if (tau <= 0) throw ParameterError("TrainConfig: tau must be positive");
        if (gamma < 0) throw ParameterError("TrainConfig: gamma must be >= 0");
        if (epochs < 0 || unlearn_epochs < 0) throw ParameterError("TrainConfig: negative epoch budget");
        if (sisa_shards < 1) throw ParameterError("TrainConfig: sisa_shards must be >= 1");
    }
};

struct TrainResult {
    ModelCheckpoint checkpoint;
    std::vector<double> dev_scores;  // per epoch
    std::int64_t steps = 0;
    double seconds = 0;
};

struct UnlearnOutcome {
    std::string method;
    ModelCheckpoint model;
    std::optional<SisaEnsemble> ensemble;
    double seconds = 0;
    std::int64_t steps = 0;
    std::vector<double> epoch_scores;  // selection score per epoch
    std::vector<LossBreakdown> losses;  // deepcut trajectory
    bool stopped_early = false;
};

namespace detail {

struct TapedParams {
    ParamMap tensors;                // tape-wired copies
    std::map<std::string, int> nodes;
};

inline TapedParams register_params(Tape& tape, const ParamMap& params) {
    TapedParams tp;
    for (const auto& [name, t] : params) {
        Tensor wired = tape.leaf(t);
        tp.nodes.emplace(name, wired.node);
        tp.tensors.emplace(name, std::move(wired));
    }
    return tp;
}

inline GradMap collect_grads(const Tape& tape, const TapedParams& tp) {
    GradMap g;
    for (const auto& [name, node] : tp.nodes) g.emplace(name, tape.grad(node));
    return g;
}

inline void batch_row(const Batch& b, std::int64_t row, std::vector<int>& ids, std::vector<int>& labels) {
    std::int64_t len = b.true_len(row);
    ids.assign(b.token_ids.begin() + row * b.max_len, b.token_ids.begin() + row * b.max_len + len);
    labels.assign(b.labels.begin() + row * b.max_len, b.labels.begin() + row * b.max_len + len);
}

// Batch cross-entropy averaged per token; returns (loss, first-view sentence
// embeddings) so callers can reuse the encodings.
inline Tensor batch_cross_entropy(const ModelConfig& mc, const ParamMap& params, const Batch& b,
                                  Rng& rng, Tape* tape, bool train,
                                  std::vector<Tensor>* out_embeddings = nullptr) {
    std::vector<Tensor> losses;
    double total_tokens = 0;
    std::vector<int> ids, labels;
    for (std::int64_t row = 0; row < b.size; ++row) {
        batch_row(b, row, ids, labels);
        Tensor z = encode_tokens(mc, params, ids, train, rng, tape);
        if (out_embeddings) out_embeddings->push_back(z);
        Tensor logits = classify_tokens(mc, params, z, tape);
        Tensor logp = log_softmax_rows(tape, logits);
        losses.push_back(nll_rows(tape, logp, labels, std::vector<double>(labels.size(), 1.0)));
        total_tokens += static_cast<double>(labels.size());
    }
    Tensor sum = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) sum = add(tape, sum, losses[i]);
    return scale(tape, sum, 1.0 / total_tokens);
}

inline std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::uint64_t stream, std::int64_t epoch) {
    return Rng(seed).derive(stream * 100000ULL + static_cast<std::uint64_t>(epoch)).seed();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Original training (CE minimization, best-dev checkpoint)
// ---------------------------------------------------------------------------

inline TrainResult train_on_sentences(const std::vector<Sentence>& train_split,
                                      const std::vector<Sentence>& dev_split, const ModelConfig& mc,
                                      const TrainConfig& tc, int outside_label,
                                      std::ostream* log = nullptr) {
    tc.validate();
    auto t0 = std::chrono::steady_clock::now();
    Rng init_rng(tc.seed);
    ModelCheckpoint ckpt = init_parameters(mc, init_rng);
    Rng rng_main = Rng(tc.seed).derive(11);
    OptimizerState opt;
    opt.base_lr = tc.base_lr;
    opt.warmup_steps = tc.warmup_steps;
    opt.weight_decay = tc.weight_decay;

    TrainResult result;
    ModelCheckpoint best = ckpt;
    double best_score = evaluate_split(ckpt, dev_split, outside_label).f1;
    for (std::int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        auto batches = make_batches(train_split, tc.batch_size, detail::epoch_shuffle_seed(tc.seed, 1, epoch));
        for (const auto& b : batches) {
            Tape tape;
            auto tp = detail::register_params(tape, ckpt.params);
            Tensor loss;
            try {
                loss = detail::batch_cross_entropy(mc, tp.tensors, b, rng_main, &tape, true);
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw TrainingError("divergence at step " + std::to_string(result.steps) + ": " + e.what());
            }
            ckpt.params = adamw_update(ckpt.params, detail::collect_grads(tape, tp), opt);
            ++result.steps;
        }
        double dev_f1 = evaluate_split(ckpt, dev_split, outside_label).f1;
        result.dev_scores.push_back(dev_f1);
        if (log) (*log) << epoch << "\tdev\tmicro_f1\t" << dev_f1 << "\n";
        if (dev_f1 > best_score) {
            best_score = dev_f1;
            best = ckpt;
        }
    }
    best.seed = tc.seed;
    best.step_count = static_cast<std::uint64_t>(result.steps);
    result.checkpoint = std::move(best);
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

inline TrainResult train_model(const TokenDataset& ds, const ModelConfig& mc, const TrainConfig& tc,
                               std::ostream* log = nullptr) {
    return train_on_sentences(ds.train, ds.dev, mc, tc, ds.labels.outside(), log);
}

// ---------------------------------------------------------------------------
// Exact unlearning by retraining from scratch on D_r
// ---------------------------------------------------------------------------

inline UnlearnOutcome unlearn_retrain(const TokenDataset& ds, const UnlearnRequest& req,
                                      const ModelConfig& mc, const TrainConfig& tc,
                                      std::ostream* log = nullptr) {
    auto t0 = std::chrono::steady_clock::now();
    auto retained = retained_sentences(ds, req);
    TrainResult r = train_on_sentences(retained, ds.dev, mc, tc, ds.labels.outside(), log);
    UnlearnOutcome out;
    out.method = "retrain";
    out.model = std::move(r.checkpoint);
    out.steps = r.steps;
    out.epoch_scores = r.dev_scores;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Fine-tune / Reverse-gradient / DeepCUT share one loop so the ablation
// identities (gamma = 0, forget weight = 0) hold bitwise: the forget-side rng
// stream is only consumed when the corresponding term is active.
// ---------------------------------------------------------------------------

namespace detail {

enum class UnlearnMode { Finetune, RevGrad, DeepCut };

inline UnlearnOutcome unlearn_loop(UnlearnMode mode, const ModelCheckpoint& original,
                                   const TokenDataset& ds, const UnlearnRequest& req,
                                   const TrainConfig& tc, std::ostream* log) {
    tc.validate();
    auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& mc = original.config;
    auto retained = retained_sentences(ds, req);
    auto forget = forget_sentences(ds, req);
    if (retained.empty() || forget.empty())
        throw ContractError("unlearn: request leaves an empty retained or forget set");
    int outside = ds.labels.outside();

    std::int64_t fbs = tc.forget_batch_size;
    if (fbs == 0) {
        double frac = static_cast<double>(forget.size()) / static_cast<double>(ds.train.size());
        fbs = std::max<std::int64_t>(1, std::llround(static_cast<double>(tc.batch_size) * frac));
    }

    bool forget_side = (mode == UnlearnMode::DeepCut && tc.gamma > 0) ||
                       (mode == UnlearnMode::RevGrad && tc.revgrad_weight > 0);

    ModelCheckpoint ckpt = original;
    Rng rng_main = Rng(tc.seed).derive(21);
    Rng rng_aux = Rng(tc.seed).derive(22);
    OptimizerState opt;
    opt.base_lr = tc.unlearn_lr;
    opt.warmup_steps = tc.unlearn_warmup;
    opt.weight_decay = tc.weight_decay;

    UnlearnOutcome out;
    out.method = mode == UnlearnMode::Finetune ? "finetune"
                 : mode == UnlearnMode::RevGrad ? "revgrad"
                                                : "deepcut";
    // Composite selection: reward retention and forgetting together. The
    // candidates are the per-epoch checkpoints; with a zero epoch budget the
    // starting model is returned unchanged.
    auto composite = [&](const ModelCheckpoint& c) {
        double dev = evaluate_split(c, ds.dev, outside).f1;
        double ff1 = evaluate_split(c, forget, outside).f1;
        return dev - ff1;
    };
    ModelCheckpoint best = ckpt;
    double best_score = -std::numeric_limits<double>::infinity();

    std::vector<const Sentence*> forget_order;
    std::size_t forget_cursor = 0;
    for (std::int64_t epoch = 0; epoch < tc.unlearn_epochs; ++epoch) {
        auto batches = make_batches(retained, tc.batch_size, detail::epoch_shuffle_seed(tc.seed, 2, epoch));
        bool stop = false;
        for (const auto& b : batches) {
            Tape tape;
            auto tp = register_params(tape, ckpt.params);
            Tensor loss;
            LossBreakdown bd;
            try {
                std::vector<Tensor> retained_view1;
                Tensor ce = batch_cross_entropy(mc, tp.tensors, b, rng_main, &tape, true,
                                                forget_side && mode == UnlearnMode::DeepCut ? &retained_view1
                                                                                            : nullptr);
                bd.ce_retained = ce.item();
                if (mode == UnlearnMode::DeepCut && forget_side) {
                    // Forget mini-batch drawn cyclically from the aux stream.
                    std::vector<const Sentence*> fb;
                    for (std::int64_t i = 0; i < fbs; ++i) {
                        if (forget_cursor == 0 || forget_cursor >= forget_order.size()) {
                            forget_order.clear();
                            for (const auto& s : forget) forget_order.push_back(&s);
                            rng_aux.shuffle(forget_order);
                            forget_cursor = 0;
                        }
                        fb.push_back(forget_order[forget_cursor++]);
                    }
                    // Second retained views + dual forget views on the aux stream.
                    std::vector<ViewRow> retained_rows;
                    {
                        std::vector<int> ids, labels;
                        for (std::int64_t row = 0; row < b.size; ++row) {
                            batch_row(b, row, ids, labels);
                            Tensor z2 = encode_tokens(mc, tp.tensors, ids, true, rng_aux, &tape);
                            const Tensor& z1 = retained_view1[static_cast<std::size_t>(row)];
                            for (std::size_t j = 0; j < labels.size(); ++j) {
                                retained_rows.push_back(ViewRow{z1, static_cast<std::int64_t>(j),
                                                                b.sentence_ids[static_cast<std::size_t>(row)],
                                                                static_cast<std::int64_t>(j), labels[j], false});
                            }
                            for (std::size_t j = 0; j < labels.size(); ++j)
                                retained_rows.push_back(ViewRow{z2, static_cast<std::int64_t>(j),
                                                                b.sentence_ids[static_cast<std::size_t>(row)],
                                                                static_cast<std::int64_t>(j), labels[j], false});
                        }
                    }
                    auto forget_rows = dual_dropout_views(mc, tp.tensors, fb, true, rng_aux, &tape, true);
                    ContrastPool pool = build_contrast_pool(&tape, forget_rows, retained_rows, tc.tau, outside);
                    auto [total, breakdown] = combined_objective(&tape, ce, pool, tc.gamma);
                    loss = total;
                    bd = breakdown;
                } else if (mode == UnlearnMode::RevGrad && forget_side) {
                    std::vector<const Sentence*> fb;
                    for (std::int64_t i = 0; i < fbs; ++i) {
                        if (forget_cursor == 0 || forget_cursor >= forget_order.size()) {
                            forget_order.clear();
                            for (const auto& s : forget) forget_order.push_back(&s);
                            rng_aux.shuffle(forget_order);
                            forget_cursor = 0;
                        }
                        fb.push_back(forget_order[forget_cursor++]);
                    }
                    std::vector<Sentence> fsents;
                    for (const auto* s : fb) fsents.push_back(*s);
                    auto fbatch = make_batches(fsents, static_cast<std::int64_t>(fsents.size()), 0, false);
                    Tensor ce_f = batch_cross_entropy(mc, tp.tensors, fbatch[0], rng_aux, &tape, true);
                    bd.forget = ce_f.item();
                    if (bd.forget > 50.0) {  // ascent blow-up guard
                        out.stopped_early = true;
                        stop = true;
                    }
                    loss = sub(&tape, ce, scale(&tape, ce_f, tc.revgrad_weight));
                    bd.combined = loss.item();
                } else {
                    loss = ce;
                    bd.combined = bd.ce_retained;
                }
                if (stop) break;
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw TrainingError("divergence at step " + std::to_string(out.steps) + ": " + e.what());
            }
            ckpt.params = adamw_update(ckpt.params, collect_grads(tape, tp), opt);
            ++out.steps;
            if (mode == UnlearnMode::DeepCut) out.losses.push_back(bd);
        }
        double score = composite(ckpt);
        out.epoch_scores.push_back(score);
        if (log) (*log) << epoch << "\tdev\tcomposite\t" << score << "\n";
        if (score > best_score) {
            best_score = score;
            best = ckpt;
        }
        if (stop) break;
    }
    out.model = std::move(best);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace detail

inline UnlearnOutcome unlearn_finetune(const ModelCheckpoint& m, const TokenDataset& ds,
                                       const UnlearnRequest& req, const TrainConfig& tc,
                                       std::ostream* log = nullptr) {
    return detail::unlearn_loop(detail::UnlearnMode::Finetune, m, ds, req, tc, log);
}

inline UnlearnOutcome unlearn_reverse_gradient(const ModelCheckpoint& m, const TokenDataset& ds,
                                               const UnlearnRequest& req, const TrainConfig& tc,
                                               std::ostream* log = nullptr) {
    return detail::unlearn_loop(detail::UnlearnMode::RevGrad, m, ds, req, tc, log);
}

inline UnlearnOutcome unlearn_deepcut(const ModelCheckpoint& m, const TokenDataset& ds,
                                      const UnlearnRequest& req, const TrainConfig& tc,
                                      std::ostream* log = nullptr) {
    return detail::unlearn_loop(detail::UnlearnMode::DeepCut, m, ds, req, tc, log);
}

// ---------------------------------------------------------------------------
// SISA: non-overlapping shards, per-shard models, shard-local retraining
// ---------------------------------------------------------------------------

// Deterministic id-based shard assignment: stable under sentence removal, so
// unlearning a shard reproduces from-scratch training on the reduced shard.
inline int sisa_shard_of(std::int64_t sentence_id, int num_shards) {
    return static_cast<int>(sentence_id % num_shards);
}

inline SisaEnsemble sisa_train(const TokenDataset& ds, int num_shards, const ModelConfig& mc,
                               const TrainConfig& tc, std::ostream* log = nullptr) {
    if (num_shards < 1) throw ParameterError("sisa_train: K must be >= 1");
    if (static_cast<std::int64_t>(ds.train.size()) < num_shards)
        throw ParameterError("sisa_train: fewer training sentences than shards");
    SisaEnsemble ens;
    std::vector<std::vector<Sentence>> shards(static_cast<std::size_t>(num_shards));
    std::int64_t max_id = 0;
    for (const auto& s : ds.train) max_id = std::max(max_id, s.id);
    ens.shard_of.assign(static_cast<std::size_t>(max_id + 1), -1);
    for (const auto& s : ds.train) {
        int k = sisa_shard_of(s.id, num_shards);
        ens.shard_of[static_cast<std::size_t>(s.id)] = k;
        shards[static_cast<std::size_t>(k)].push_back(s);
    }
    for (int k = 0; k < num_shards; ++k) {
        if (shards[static_cast<std::size_t>(k)].empty())
            throw DataError("sisa_train: shard " + std::to_string(k) + " is empty");
        std::uint64_t shard_seed = Rng(tc.seed).derive(5000 + static_cast<std::uint64_t>(k)).seed();
        ens.shard_seeds.push_back(shard_seed);
        TrainConfig stc = tc;
        stc.seed = shard_seed;
        TrainResult r = train_on_sentences(shards[static_cast<std::size_t>(k)], ds.dev, mc, stc,
                                           ds.labels.outside(), log);
        ens.members.push_back(std::move(r.checkpoint));
    }
    return ens;
}

// Retrains exactly the shards intersecting D_f, from fresh initialization on
// shard \ D_f with the original per-shard seeds. Untouched shards are
// returned bit-for-bit.
inline UnlearnOutcome sisa_unlearn(const SisaEnsemble& ens, const TokenDataset& ds,
                                   const UnlearnRequest& req, const ModelConfig& mc,
                                   const TrainConfig& tc, std::ostream* log = nullptr) {
    auto t0 = std::chrono::steady_clock::now();
    int k = ens.num_shards();
    std::vector<bool> affected(static_cast<std::size_t>(k), false);
    for (auto id : req.forget_ids) affected[static_cast<std::size_t>(sisa_shard_of(id, k))] = true;
    UnlearnOutcome out;
    out.method = "sisa";
    SisaEnsemble updated = ens;
    for (int shard = 0; shard < k; ++shard) {
        if (!affected[static_cast<std::size_t>(shard)]) continue;
        std::vector<Sentence> keep;
        for (const auto& s : ds.train)
            if (sisa_shard_of(s.id, k) == shard && !req.is_forgotten(s.id)) keep.push_back(s);
        if (keep.empty()) throw DataError("sisa_unlearn: shard " + std::to_string(shard) +
                                          " would be empty after unlearning");
        TrainConfig stc = tc;
        stc.seed = ens.shard_seeds[static_cast<std::size_t>(shard)];
        TrainResult r = train_on_sentences(keep, ds.dev, mc, stc, ds.labels.outside(), log);
        updated.members[static_cast<std::size_t>(shard)] = std::move(r.checkpoint);
        out.steps += r.steps;
    }
    out.ensemble = std::move(updated);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace unlearn
