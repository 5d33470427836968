// optim.hpp
//
// Adam with bias correction.  Moment buffers are keyed by parameter order
// and allocated on the first step; the caller owns gradient zeroing.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace usta {

struct AdamState {
    double lr = 0.0001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw StateError("adam_step: parameter count changed under the optimizer");

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].requires_grad())
            throw StateError("adam_step: parameter without gradient");
        if (state.m[i].size() != params[i].numel())
            throw StateError("adam_step: parameter shape changed under the optimizer");
        const std::vector<double>& g = params[i].grad();
        std::vector<double>& pd = params[i].data();
        std::vector<double>& mi = state.m[i];
        std::vector<double>& vi = state.v[i];
        for (std::size_t j = 0; j < pd.size(); ++j) {
            mi[j] = state.beta1 * mi[j] + (1.0 - state.beta1) * g[j];
            vi[j] = state.beta2 * vi[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = mi[j] / c1;
            const double vhat = vi[j] / c2;
            pd[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

} // namespace usta
