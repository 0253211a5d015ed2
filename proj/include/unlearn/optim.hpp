#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "unlearn/tensor.hpp"

namespace unlearn {

using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, std::vector<double>>;

// Linear warmup, then constant.
inline double lr_schedule(std::int64_t step, double base_lr, std::int64_t warmup_steps) {
    if (base_lr < 0) throw ParameterError("lr_schedule: negative base_lr");
    if (step < 0 || warmup_steps < 0) throw ParameterError("lr_schedule: negative step/warmup");
    if (warmup_steps == 0 || step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

// Decoupled-weight-decay Adam with bias correction. Moments are keyed and
// shaped like their parameters; `step` counts completed updates.
struct OptimizerState {
    double base_lr = 1e-3;
    std::int64_t warmup_steps = 0;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    ParamMap m;
    ParamMap v;
};

inline ParamMap adamw_update(const ParamMap& params, const GradMap& grads, OptimizerState& state) {
    ParamMap out;
    double lr = lr_schedule(state.step, state.base_lr, state.warmup_steps);
    std::int64_t t = state.step + 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
    for (const auto& [name, p] : params) {
        auto git = grads.find(name);
        const std::vector<double>* g = git == grads.end() ? nullptr : &git->second;
        if (g && static_cast<std::int64_t>(g->size()) != p.numel())
            throw DimensionError("adamw_update: gradient size mismatch for " + name);
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            state.m.emplace(name, Tensor::zeros(p.shape));
            state.v.emplace(name, Tensor::zeros(p.shape));
            mit = state.m.find(name);
        }
        Tensor& mt = mit->second;
        Tensor& vt = state.v.at(name);
        if (mt.shape != p.shape)
            throw DimensionError("adamw_update: moment shape mismatch for " + name);
        std::vector<double> np(p.vec());
        auto mvec = std::make_shared<std::vector<double>>(mt.vec());
        auto vvec = std::make_shared<std::vector<double>>(vt.vec());
        for (std::size_t i = 0; i < np.size(); ++i) {
            double gi = g ? (*g)[i] : 0.0;
            (*mvec)[i] = state.beta1 * (*mvec)[i] + (1.0 - state.beta1) * gi;
            (*vvec)[i] = state.beta2 * (*vvec)[i] + (1.0 - state.beta2) * gi * gi;
            double mhat = (*mvec)[i] / bc1;
            double vhat = (*vvec)[i] / bc2;
            np[i] -= lr * (mhat / (std::sqrt(vhat) + state.epsilon) + state.weight_decay * p.vec()[i]);
        }
        check_finite("adamw_update", np);
        mt.data = mvec;
        vt.data = vvec;
        out.emplace(name, Tensor(p.shape, std::move(np)));
    }
    state.step += 1;
    return out;
}

}  // namespace unlearn
