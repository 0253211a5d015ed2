#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/model.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

// ---------------------------------------------------------------------------
// Token cross-entropy
// ---------------------------------------------------------------------------

// Negative log-probability of gold labels over masked tokens, averaged per
// token. Differentiable through `logits`.
inline Tensor token_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels,
                                  const std::vector<double>& mask) {
    if (static_cast<std::int64_t>(labels.size()) != logits.rows() || mask.size() != labels.size())
        throw ContractError("token_cross_entropy: labels/mask do not align with logits rows");
    double total = 0;
    for (double w : mask) total += w;
    if (total <= 0) throw ContractError("token_cross_entropy: mask selects no tokens");
    Tensor logp = log_softmax_rows(tape, logits);
    return scale(tape, nll_rows(tape, logp, labels, mask), 1.0 / total);
}

// ---------------------------------------------------------------------------
// Supervised contrastive loss over L2-normalized embeddings.
// ---------------------------------------------------------------------------

// Every row is an anchor; positives are the other rows with the same label,
// the candidate set is all other rows. Averaged over anchors.
inline Tensor supcon_loss(Tape* tape, const Tensor& embeddings, const std::vector<int>& labels,
                          double tau) {
    if (tau <= 0) throw ParameterError("supcon_loss: tau must be positive");
    std::int64_t m = embeddings.rows(), d = embeddings.cols();
    if (static_cast<std::int64_t>(labels.size()) != m)
        throw ContractError("supcon_loss: labels do not align with embedding rows");
    if (m < 2) throw ContractError("supcon_loss: need at least two embeddings");
    Tensor z = l2_normalize_rows(tape, embeddings);

    const auto& Z = z.vec();
    auto sim = [&](std::int64_t a, std::int64_t b) {
        double s = 0;
        for (std::int64_t j = 0; j < d; ++j) s += Z[a * d + j] * Z[b * d + j];
        return s / tau;
    };

    double loss = 0;
    // saved per-anchor softmax weights for the backward pass
    auto probs = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(m));
    auto pos_sets = std::make_shared<std::vector<std::vector<std::int64_t>>>(static_cast<std::size_t>(m));
    for (std::int64_t a = 0; a < m; ++a) {
        std::vector<std::int64_t> pos;
        for (std::int64_t i = 0; i < m; ++i)
            if (i != a && labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(a)])
                pos.push_back(i);
        if (pos.empty())
            throw ContractError("supcon_loss: anchor " + std::to_string(a) +
                                " has no positive sample (augmentation guarantee violated)");
        std::vector<double> s(static_cast<std::size_t>(m), 0.0);
        double mx = -1e300;
        for (std::int64_t i = 0; i < m; ++i)
            if (i != a) mx = std::max(mx, s[static_cast<std::size_t>(i)] = sim(i, a));
        double denom = 0;
        for (std::int64_t i = 0; i < m; ++i)
            if (i != a) denom += std::exp(s[static_cast<std::size_t>(i)] - mx);
        double lse = mx + std::log(denom);
        std::vector<double> p(static_cast<std::size_t>(m), 0.0);
        for (std::int64_t i = 0; i < m; ++i)
            if (i != a) p[static_cast<std::size_t>(i)] = std::exp(s[static_cast<std::size_t>(i)] - lse);
        for (auto i : pos) loss += (lse - s[static_cast<std::size_t>(i)]) / static_cast<double>(pos.size());
        (*probs)[static_cast<std::size_t>(a)] = std::move(p);
        (*pos_sets)[static_cast<std::size_t>(a)] = std::move(pos);
    }
    loss /= static_cast<double>(m);
    check_finite("supcon_loss", {loss});
    Tensor r = Tensor::scalar(loss);
    if (tape && z.node >= 0) {
        int zn = z.node, id = tape->new_node(1);
        auto zd = z.data;
        r.node = id;
        std::vector<int> labs = labels;
        tape->set_back(id, [zn, id, zd, probs, pos_sets, labs, m, d, tau](Tape& t) {
            double g0 = t.grad(id)[0] / (tau * static_cast<double>(m));
            auto& gz = t.grad_mut(zn);
            for (std::int64_t a = 0; a < m; ++a) {
                const auto& p = (*probs)[static_cast<std::size_t>(a)];
                const auto& pos = (*pos_sets)[static_cast<std::size_t>(a)];
                double inv_pos = 1.0 / static_cast<double>(pos.size());
                // dL/ds_ia = (-[i in P_a]/|P_a| + p_i) summed over positive terms
                for (std::int64_t i = 0; i < m; ++i) {
                    if (i == a) continue;
                    double coef = p[static_cast<std::size_t>(i)];  // appears in every positive term
                    double gi = g0 * coef;
                    for (std::int64_t j = 0; j < d; ++j) {
                        gz[i * d + j] += gi * (*zd)[a * d + j];
                        gz[a * d + j] += gi * (*zd)[i * d + j];
                    }
                }
                for (auto i : pos) {
                    double gi = -g0 * inv_pos;
                    for (std::int64_t j = 0; j < d; ++j) {
                        gz[i * d + j] += gi * (*zd)[a * d + j];
                        gz[a * d + j] += gi * (*zd)[i * d + j];
                    }
                }
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// Forget loss and contrast pools
// ---------------------------------------------------------------------------

// Pool feeding the forget loss: anchors come from forget-sentence tokens,
// candidates from the mini-batch union, all rows of `embeddings` already
// L2-normalized on the tape.
struct ContrastPool {
    Tensor embeddings;  // [M x d], normalized
    std::vector<int> labels;
    std::vector<std::int64_t> anchors;
    std::vector<std::vector<std::int64_t>> same_label;  // D_y per anchor
    std::vector<std::vector<std::int64_t>> diff_label;  // D_not_y per anchor
    double tau = 0.1;
    std::int64_t skipped_anchors = 0;  // anchors dropped for lack of positives
};

// One embedding row plus bookkeeping for pool construction.
struct ViewRow {
    Tensor embedding;   // [L x d] sentence embedding this row belongs to
    std::int64_t row;   // token row within the sentence embedding
    std::int64_t sentence_id;
    std::int64_t token_pos;
    int label;
    bool from_forget;
};

// Per Eq-style definition: for each forget anchor z_f, average over
// x_i in D_not_y of -log[exp(s_if) / (exp(s_if) + sum_{j in D_y} exp(s_jf))],
// summed over anchors. Similarities are inner products of normalized rows
// scaled by 1/tau; the denominator carries exactly one negative per term.
inline Tensor forget_loss(Tape* tape, const ContrastPool& pool) {
    std::int64_t m = pool.embeddings.rows(), d = pool.embeddings.cols();
    if (pool.anchors.empty()) return Tensor::scalar(0.0);
    if (pool.tau <= 0) throw ParameterError("forget_loss: tau must be positive");
    const auto& Z = pool.embeddings.vec();
    auto sim = [&](std::int64_t a, std::int64_t b) {
        double s = 0;
        for (std::int64_t j = 0; j < d; ++j) s += Z[a * d + j] * Z[b * d + j];
        return s / pool.tau;
    };
    double loss = 0;
    // forward quantities reused in backward: q[a][i] for negatives, r[a][j] for positives
    struct AnchorWork {
        std::vector<double> q_neg;               // per negative i: exp(s_if)/denom_i
        std::vector<std::vector<double>> q_pos;  // per negative i, per positive j
    };
    auto work = std::make_shared<std::vector<AnchorWork>>();
    for (std::size_t ai = 0; ai < pool.anchors.size(); ++ai) {
        std::int64_t f = pool.anchors[ai];
        const auto& dy = pool.same_label[ai];
        const auto& dn = pool.diff_label[ai];
        if (dy.empty() || dn.empty())
            throw ContractError("forget_loss: anchor " + std::to_string(f) +
                                " has empty same-label or diff-label pool");
        AnchorWork w;
        std::vector<double> spos(dy.size());
        double mx = -1e300;
        for (std::size_t j = 0; j < dy.size(); ++j) mx = std::max(mx, spos[j] = sim(dy[j], f));
        for (std::size_t i = 0; i < dn.size(); ++i) {
            double sneg = sim(dn[i], f);
            double top = std::max(mx, sneg);
            double denom = std::exp(sneg - top);
            std::vector<double> qp(dy.size());
            for (std::size_t j = 0; j < dy.size(); ++j) denom += (qp[j] = std::exp(spos[j] - top));
            double qn = std::exp(sneg - top) / denom;
            for (auto& x : qp) x /= denom;
            loss += -(std::log(qn)) / static_cast<double>(dn.size());
            w.q_neg.push_back(qn);
            w.q_pos.push_back(std::move(qp));
        }
        work->push_back(std::move(w));
    }
    check_finite("forget_loss", {loss});
    Tensor r = Tensor::scalar(loss);
    if (tape && pool.embeddings.node >= 0) {
        int zn = pool.embeddings.node, id = tape->new_node(1);
        auto zd = pool.embeddings.data;
        auto anchors = pool.anchors;
        auto same = pool.same_label;
        auto diff = pool.diff_label;
        double tau = pool.tau;
        r.node = id;
        tape->set_back(id, [zn, id, zd, work, anchors, same, diff, tau, d](Tape& t) {
            double g0 = t.grad(id)[0] / tau;
            auto& gz = t.grad_mut(zn);
            auto push = [&](std::int64_t u, std::int64_t v, double c) {
                // d(s_uv)/dz: adds c * z_v to grad of z_u and c * z_u to grad of z_v
                for (std::int64_t j = 0; j < d; ++j) {
                    gz[u * d + j] += c * (*zd)[v * d + j];
                    gz[v * d + j] += c * (*zd)[u * d + j];
                }
            };
            for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
                std::int64_t f = anchors[ai];
                const auto& dy = same[ai];
                const auto& dn = diff[ai];
                const auto& w = (*work)[ai];
                double inv_n = 1.0 / static_cast<double>(dn.size());
                for (std::size_t i = 0; i < dn.size(); ++i) {
                    // term = -s_if + log(exp(s_if) + sum_j exp(s_jf))
                    push(dn[i], f, g0 * inv_n * (w.q_neg[i] - 1.0));
                    for (std::size_t j = 0; j < dy.size(); ++j)
                        push(dy[j], f, g0 * inv_n * w.q_pos[i][j]);
                }
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double ce_retained = 0;
    double forget = 0;
    double combined = 0;
    double gamma = 0;
    std::int64_t anchors_used = 0;
    std::int64_t anchors_skipped = 0;
};

// combined = CE(retained) + gamma * L_f; returns the differentiable scalar
// plus a plain-number breakdown.
inline std::pair<Tensor, LossBreakdown> combined_objective(Tape* tape, const Tensor& ce_retained,
                                                           const ContrastPool& pool, double gamma) {
    if (gamma < 0) throw ParameterError("combined_objective: gamma must be >= 0");
    LossBreakdown bd;
    bd.gamma = gamma;
    bd.ce_retained = ce_retained.item();
    bd.anchors_used = static_cast<std::int64_t>(pool.anchors.size());
    bd.anchors_skipped = pool.skipped_anchors;
    if (gamma == 0.0 || pool.anchors.empty()) {
        bd.forget = 0.0;
        bd.combined = bd.ce_retained;
        return {ce_retained, bd};
    }
    Tensor lf = forget_loss(tape, pool);
    bd.forget = lf.item();
    Tensor total = add(tape, ce_retained, scale(tape, lf, gamma));
    bd.combined = total.item();
    return {total, bd};
}

// ---------------------------------------------------------------------------
// Dual dropout views and pool construction
// ---------------------------------------------------------------------------

// Encodes every sentence twice in train mode with independently advancing
// dropout masks; each token in the batch therefore appears at least twice
// with its label, so contrast pools are always constructible.
inline std::vector<ViewRow> dual_dropout_views(const ModelConfig& cfg, const ParamMap& params,
                                               const std::vector<const Sentence*>& batch, bool train,
                                               Rng& rng, Tape* tape, bool from_forget) {
    if (!train)
        throw ContractError("dual_dropout_views: requires train mode (views would be identical)");
    std::vector<ViewRow> rows;
    for (const Sentence* s : batch) {
        for (int view = 0; view < 2; ++view) {
            Tensor z = encode_tokens(cfg, params, s->token_ids, true, rng, tape);
            for (std::size_t j = 0; j < s->length(); ++j)
                rows.push_back(ViewRow{z, static_cast<std::int64_t>(j), s->id,
                                       static_cast<std::int64_t>(j), s->labels[j], from_forget});
        }
    }
    return rows;
}

// Assembles the mini-batch-union pool: anchors are forget-token views with a
// non-O gold label; D_y is every other same-label view excluding the anchor
// token's own two views; D_not_y is every different-label view. Anchors whose
// label appears nowhere else in the union are skipped and counted.
inline ContrastPool build_contrast_pool(Tape* tape, const std::vector<ViewRow>& forget_views,
                                        const std::vector<ViewRow>& retained_views, double tau,
                                        int outside_label) {
    if (tau <= 0) throw ParameterError("build_contrast_pool: tau must be positive");
    ContrastPool pool;
    pool.tau = tau;

    std::vector<const ViewRow*> all;
    for (const auto& v : forget_views) all.push_back(&v);
    for (const auto& v : retained_views) all.push_back(&v);
    if (all.empty()) return pool;

    // One big matrix so normalization and the loss see a single tape node.
    // Rows arrive contiguous per sentence-view tensor, so the concat blocks
    // are the distinct view tensors in order of first appearance.
    std::vector<std::int64_t> row_of(all.size());
    {
        std::vector<Tensor> parts;
        std::shared_ptr<std::vector<double>> cur;
        std::int64_t base = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (all[i]->embedding.data != cur) {
                if (cur) base += parts.back().rows();
                parts.push_back(all[i]->embedding);
                cur = all[i]->embedding.data;
            }
            row_of[i] = base + all[i]->row;
        }
        pool.embeddings = l2_normalize_rows(tape, concat_rows(tape, parts));
    }

    pool.labels.assign(static_cast<std::size_t>(pool.embeddings.rows()), 0);
    for (std::size_t i = 0; i < all.size(); ++i)
        pool.labels[static_cast<std::size_t>(row_of[i])] = all[i]->label;

    for (std::size_t a = 0; a < all.size(); ++a) {
        const ViewRow& anchor = *all[a];
        if (!anchor.from_forget || anchor.label == outside_label) continue;
        std::vector<std::int64_t> dy, dn;
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (i == a) continue;
            const ViewRow& c = *all[i];
            bool own_view = c.from_forget == anchor.from_forget && c.sentence_id == anchor.sentence_id &&
                            c.token_pos == anchor.token_pos;
            if (own_view) continue;
            if (c.label == anchor.label)
                dy.push_back(row_of[i]);
            else
                dn.push_back(row_of[i]);
        }
        if (dy.empty() || dn.empty()) {
            ++pool.skipped_anchors;
            continue;
        }
        pool.anchors.push_back(row_of[a]);
        pool.same_label.push_back(std::move(dy));
        pool.diff_label.push_back(std::move(dn));
    }
    return pool;
}

}  // namespace unlearn
