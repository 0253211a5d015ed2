// Shared test utilities: finite-difference gradient checking and small
// dataset fixtures.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/model.hpp"
#include "unlearn/tensor.hpp"

namespace testutil {

using namespace unlearn;

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(s, std::move(v));
}

// Loss function over a list of input tensors. Must be a pure function of the
// inputs: called with a live tape for the analytic pass and with tape=nullptr
// for the numeric probes.
using LossFn = std::function<Tensor(Tape*, const std::vector<Tensor>&)>;

// Central finite differences against the tape gradient; returns the worst
// relative error over every coordinate of every input.
inline double max_fd_error(const LossFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
    Tape tape;
    std::vector<Tensor> wired;
    wired.reserve(inputs.size());
    for (const auto& t : inputs) wired.push_back(tape.leaf(t));
    Tensor loss = f(&tape, wired);
    tape.backward(loss);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& analytic = tape.grad(wired[k].node);
        for (std::int64_t i = 0; i < inputs[k].numel(); ++i) {
            auto probe = [&](double delta) {
                std::vector<Tensor> pert = inputs;
                auto d = std::make_shared<std::vector<double>>(*inputs[k].data);
                (*d)[static_cast<std::size_t>(i)] += delta;
                pert[k].data = d;
                return f(nullptr, pert).item();
            };
            double numeric = (probe(h) - probe(-h)) / (2.0 * h);
            double a = analytic[static_cast<std::size_t>(i)];
            double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Reduces an arbitrary-shaped op output to a scalar with fixed random
// weights, so the check exercises a nontrivial upstream gradient.
inline Tensor weighted_sum(Tape* tape, const Tensor& out, const Tensor& weights) {
    return sum_all(tape, mul(tape, out, weights));
}

// Tiny hand-built dataset: three entity classes plus O, trigger tokens per
// class, already encoded.
inline TokenDataset tiny_dataset(std::int64_t train_n = 24, std::uint64_t seed = 0) {
    SyntheticSpec spec;
    spec.num_train = train_n;
    spec.num_dev = 8;
    spec.num_test = 8;
    spec.num_classes = 3;
    spec.vocab_size = 200;
    spec.mean_len = 6.0;
    spec.entity_rate = 0.5;
    spec.triggers_per_class = 8;
    TokenDataset ds = generate_synthetic(spec, seed);
    build_vocab_and_encode(ds);
    return ds;
}

inline ModelConfig tiny_model_config(const TokenDataset& ds) {
    ModelConfig mc;
    mc.vocab_size = ds.vocab.size();
    mc.max_len = 32;
    mc.hidden_dim = 16;
    mc.num_layers = 1;
    mc.num_heads = 2;
    mc.dropout_rate = 0.1;
    mc.num_classes = ds.labels.size();
    return mc;
}

}  // namespace testutil
