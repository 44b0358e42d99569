#pragma once

// RMSProp with a per-parameter running average of squared gradients:
//   v <- alpha*v + (1-alpha)*g^2
//   p <- p - lr * g / (sqrt(v) + eps)

#include <cmath>
#include <string>
#include <vector>

#include "ag/array.hpp"

namespace ag {

template <typename T>
struct RmsPropConfig {
    T lr = T(2e-4);
    T alpha = T(0.99);
    T eps = T(1e-8);
};

template <typename T>
struct RmsPropState {
    std::vector<Arr<T>> v;  // one running average per parameter, lazily sized

    void reset() { v.clear(); }
};

// One update over a parameter list. params and grads are parallel; the state
// allocates zero-initialized averages on first use and then insists shapes
// never change.
template <typename T>
void rmsprop_step(const std::vector<Arr<T>*>& params, const std::vector<const Arr<T>*>& grads,
                  RmsPropState<T>& state, const RmsPropConfig<T>& cfg) {
    check(params.size() == grads.size(), "rmsprop_step: params/grads size mismatch");
    if (state.v.empty()) {
        state.v.reserve(params.size());
        for (const Arr<T>* p : params) state.v.emplace_back(p->shape);
    }
    check(state.v.size() == params.size(), "rmsprop_step: state tracks a different parameter count");
    for (size_t k = 0; k < params.size(); ++k) {
        Arr<T>& p = *params[k];
        const Arr<T>& g = *grads[k];
        Arr<T>& v = state.v[k];
        check(p.shape == g.shape && p.shape == v.shape,
              "rmsprop_step: shape mismatch at parameter " + std::to_string(k));
        const T omalpha = T(1) - cfg.alpha;
        for (int64_t i = 0; i < p.numel(); ++i) {
            T gi = g.data[i];
            v.data[i] = cfg.alpha * v.data[i] + omalpha * gi * gi;
            p.data[i] -= cfg.lr * gi / (std::sqrt(v.data[i]) + cfg.eps);
        }
    }
}

}  // namespace ag
