#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "relex/errors.hpp"
#include "relex/tensor.hpp"

namespace relex {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

// First-order update state. Adam moments are allocated lazily, one pair per
// parameter, shape-congruent with it.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step_count = 0;
    std::vector<std::vector<double>> m;  // first moments, per parameter
    std::vector<std::vector<double>> v;  // second moments, per parameter
};

// In-place parameter update from currently accumulated gradients. Gradients
// are left untouched; the caller zeroes them between steps.
inline void optimizer_step(std::vector<Tensor>& params, OptimizerState& state) {
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].grad().size() != params[i].numel())
            throw ContractError("optimizer_step: parameter " + std::to_string(i) +
                                " has no gradient");
    if (state.kind == OptimizerKind::adam && state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    ++state.step_count;
    const double lr = state.learning_rate;
    if (state.kind == OptimizerKind::sgd) {
        for (auto& p : params) {
            double* w = p.data();
            const double* g = p.grad().data();
            for (std::size_t j = 0; j < p.numel(); ++j) w[j] -= lr * g[j];
        }
        return;
    }
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* w = params[i].data();
        const double* g = params[i].grad().data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        for (std::size_t j = 0; j < params[i].numel(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace relex
