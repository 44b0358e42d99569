#pragma once

// Central finite-difference verification of reverse-mode gradients.
//
// The callable f takes a Tensor<T> and returns a scalar Tensor<T>; it must
// not capture the probe point. The reverse-mode gradient is compared per
// coordinate against (f(x+h e_k) - f(x-h e_k)) / 2h with the error metric
//   |g_ad - g_fd| / max(1, |g_fd|),
// i.e. relative above unit scale and absolute below it.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ag/tensor.hpp"

namespace ag {

template <typename T>
struct GradCheckReport {
    T max_err = 0;
    int64_t worst_coord = -1;
    T ad = 0, fd = 0;  // gradients at the worst coordinate
};

// Checks a subset of coordinates (all of them when coords is empty).
template <typename T, class F>
GradCheckReport<T> finite_diff_check(F&& f, const Arr<T>& x0, T h, std::vector<int64_t> coords = {}) {
    Tape<T> tape;
    Tensor<T> x = tape.leaf(x0);
    Tensor<T> y = f(x);
    tape.backward(y);
    Arr<T> g = tape.grad(x);

    if (coords.empty()) {
        coords.resize(static_cast<size_t>(x0.numel()));
        for (int64_t k = 0; k < x0.numel(); ++k) coords[static_cast<size_t>(k)] = k;
    }
    GradCheckReport<T> rep;
    for (int64_t k : coords) {
        Arr<T> xp = x0, xm = x0;
        xp.data[k] += h;
        xm.data[k] -= h;
        T fp = f(constant(xp)).item();
        T fm = f(constant(xm)).item();
        T fd = (fp - fm) / (2 * h);
        T err = std::abs(g.data[k] - fd) / std::max(T(1), std::abs(fd));
        if (err > rep.max_err) {
            rep.max_err = err;
            rep.worst_coord = k;
            rep.ad = g.data[k];
            rep.fd = fd;
        }
    }
    return rep;
}

}  // namespace ag
