#pragma once

// Reverse-mode automatic differentiation on a flat tape.
//
// Every op computes its output eagerly and, when any input is tracked,
// appends one node holding a pullback closure. backward() seeds the loss
// gradient with 1 and runs the pullbacks in reverse append order, so each
// node fires exactly once and accumulation order is fixed. Everything is
// single-threaded by design; determinism falls out of that.
//
// Tensors are value types: a shared buffer plus an optional (tape, node)
// handle. Untracked tensors run through the same op code without recording,
// which is the evaluation path. Tensors must not outlive their tape.

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <utility>

#include "ag/array.hpp"

namespace ag {

template <typename T>
class Tape;

template <typename T>
struct Tensor {
    std::shared_ptr<Arr<T>> arr;
    Tape<T>* tape = nullptr;
    int32_t node = -1;

    Tensor() = default;

    bool tracked() const { return tape != nullptr && node >= 0; }
    const Shape& shape() const { return arr->shape; }
    int64_t numel() const { return arr->numel(); }
    const T* data() const { return arr->ptr(); }

    T item() const {
        check(numel() == 1, "item: tensor has " + std::to_string(numel()) + " elements");
        return arr->data[0];
    }
};

template <typename T>
Tensor<T> constant(std::shared_ptr<Arr<T>> a) {
    Tensor<T> t;
    t.arr = std::move(a);
    return t;
}

template <typename T>
Tensor<T> constant(Arr<T> a) {
    return constant(std::make_shared<Arr<T>>(std::move(a)));
}

template <typename T>
Tensor<T> constant(const Shape& s, std::vector<T> d) {
    return constant(Arr<T>(s, std::move(d)));
}

template <typename T>
Tensor<T> scalar(T v) {
    return constant<T>(Shape{1}, {v});
}

template <typename T>
Tensor<T> zeros(const Shape& s) {
    return constant(Arr<T>(s));
}

template <typename T>
Tensor<T> full(const Shape& s, T v) {
    Arr<T> a(s);
    std::fill(a.data.begin(), a.data.end(), v);
    return constant(std::move(a));
}

template <typename T>
class Tape {
public:
    using Pull = std::function<void(Tape<T>&, const Arr<T>&)>;

    // Wraps a parameter/input buffer as a tracked leaf. The buffer is shared,
    // not copied, so external updates between tapes are visible.
    Tensor<T> leaf(std::shared_ptr<Arr<T>> a) {
        Tensor<T> t;
        t.arr = std::move(a);
        t.tape = this;
        t.node = push(t.arr->shape, nullptr);
        return t;
    }
    Tensor<T> leaf(Arr<T> a) { return leaf(std::make_shared<Arr<T>>(std::move(a))); }

    int32_t push(const Shape& shape, Pull pull) {
        nodes_.push_back(Node{shape, std::move(pull)});
        return static_cast<int32_t>(nodes_.size()) - 1;
    }

    // Gradient buffer for a node, allocated to zeros on first touch.
    Arr<T>& grad_buf(int32_t node) {
        if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
        if (grads_[node].empty() && numel(nodes_[node].shape) > 0) grads_[node] = Arr<T>(nodes_[node].shape);
        return grads_[node];
    }

    void backward(const Tensor<T>& loss) {
        check(loss.tracked() && loss.tape == this, "backward: loss is not tracked on this tape");
        check(loss.numel() == 1, "backward: loss must be a scalar, got " + shape_str(loss.shape()));
        grads_.assign(nodes_.size(), Arr<T>());
        grad_buf(loss.node).data[0] = T(1);
        for (int32_t id = loss.node; id >= 0; --id) {
            if (grads_[id].empty()) continue;
            if (nodes_[id].pull) nodes_[id].pull(*this, grads_[id]);
        }
    }

    // Gradient of the last backward() with respect to a tracked tensor.
    // Nodes the loss never reached get zeros.
    Arr<T> grad(const Tensor<T>& t) const {
        check(t.tracked() && t.tape == this, "grad: tensor is not tracked on this tape");
        if (static_cast<size_t>(t.node) < grads_.size() && !grads_[t.node].empty()) return grads_[t.node];
        return Arr<T>(t.shape());
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        Pull pull;
    };
    std::vector<Node> nodes_;
    std::vector<Arr<T>> grads_;
};

namespace detail {

// All tracked inputs of one op must live on the same tape.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> ins) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : ins) {
        if (!t->tracked()) continue;
        if (tape == nullptr) tape = t->tape;
        else check(tape == t->tape, "op: inputs live on different tapes");
    }
    return tape;
}

template <typename T>
Tensor<T> make_result(Tape<T>* tape, Arr<T> out, typename Tape<T>::Pull pull) {
    Tensor<T> r;
    r.arr = std::make_shared<Arr<T>>(std::move(out));
    if (tape != nullptr) {
        r.tape = tape;
        r.node = tape->push(r.arr->shape, std::move(pull));
    }
    return r;
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Arr<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] + pb[i];
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    int32_t na = a.node, nb = b.node;
    bool ta = a.tracked(), tb = b.tracked();
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        if (ta) {
            Arr<T>& ga = tp.grad_buf(na);
            for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        }
        if (tb) {
            Arr<T>& gb = tp.grad_buf(nb);
            for (int64_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Arr<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] - pb[i];
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    int32_t na = a.node, nb = b.node;
    bool ta = a.tracked(), tb = b.tracked();
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        if (ta) {
            Arr<T>& ga = tp.grad_buf(na);
            for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        }
        if (tb) {
            Arr<T>& gb = tp.grad_buf(nb);
            for (int64_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Arr<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] * pb[i];
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    int32_t na = a.node, nb = b.node;
    bool ta = a.tracked(), tb = b.tracked();
    auto va = a.arr, vb = b.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        if (ta) {
            Arr<T>& ga = tp.grad_buf(na);
            for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * vb->data[i];
        }
        if (tb) {
            Arr<T>& gb = tp.grad_buf(nb);
            for (int64_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * va->data[i];
        }
    });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), "div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Arr<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] / pb[i];
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    int32_t na = a.node, nb = b.node;
    bool ta = a.tracked(), tb = b.tracked();
    auto va = a.arr, vb = b.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        if (ta) {
            Arr<T>& ga = tp.grad_buf(na);
            for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] / vb->data[i];
        }
        if (tb) {
            Arr<T>& gb = tp.grad_buf(nb);
            for (int64_t i = 0; i < g.numel(); ++i)
                gb.data[i] -= g.data[i] * va->data[i] / (vb->data[i] * vb->data[i]);
        }
    });
}

// ---- scalar forms ----

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = c * pa[i];
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += c * g.data[i];
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] + c;
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

// ---- elementwise unary ----

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] > T(0) ? pa[i] : T(0);
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto va = a.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (va->data[i] > T(0)) ga.data[i] += g.data[i];
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        T x = pa[i];
        // Split on sign so exp never overflows.
        out.data[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    }
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto vy = std::make_shared<Arr<T>>(out);
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) {
            T y = vy->data[i];
            ga.data[i] += g.data[i] * y * (T(1) - y);
        }
    });
}

template <typename T>
Tensor<T> log_(const Tensor<T>& a) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::log(pa[i]);
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto va = a.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] / va->data[i];
    });
}

template <typename T>
Tensor<T> exp_(const Tensor<T>& a) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::exp(pa[i]);
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto vy = std::make_shared<Arr<T>>(out);
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * vy->data[i];
    });
}

template <typename T>
Tensor<T> sqrt_(const Tensor<T>& a) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::sqrt(pa[i]);
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto vy = std::make_shared<Arr<T>>(out);
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) {
            T y = vy->data[i];
            // Subgradient 0 at the origin keeps padded/sentinel entries inert.
            if (y > T(0)) ga.data[i] += g.data[i] / (T(2) * y);
        }
    });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] * pa[i];
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto va = a.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += T(2) * g.data[i] * va->data[i];
    });
}

template <typename T>
Tensor<T> abs_(const Tensor<T>& a) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::abs(pa[i]);
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto va = a.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) {
            T x = va->data[i];
            // Subgradient 0 at the kink.
            if (x > T(0)) ga.data[i] += g.data[i];
            else if (x < T(0)) ga.data[i] -= g.data[i];
        }
    });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    Arr<T> out(a.shape());
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = pa[i] < lo ? lo : (pa[i] > hi ? hi : pa[i]);
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto va = a.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) {
            T x = va->data[i];
            if (x > lo && x < hi) ga.data[i] += g.data[i];
        }
    });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
    return clamp(a, lo, std::numeric_limits<T>::infinity());
}

// ---- shape ops ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& s) {
    check(numel(s) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    Arr<T> out(s, a.arr->data);
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
}

// Numpy-style broadcast: shapes align on trailing axes; source dims must
// equal the target or be 1.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& s) {
    const Shape& as = a.shape();
    check(as.size() <= s.size(), "broadcast_to: rank of " + shape_str(as) + " exceeds " + shape_str(s));
    size_t off = s.size() - as.size();
    // Source strides mapped into the target's axes, 0 where broadcast.
    std::vector<int64_t> sst(s.size(), 0);
    {
        std::vector<int64_t> ast = strides_of(as);
        for (size_t i = 0; i < as.size(); ++i) {
            check(as[i] == s[off + i] || as[i] == 1,
                  "broadcast_to: dim " + std::to_string(i) + " of " + shape_str(as) +
                      " incompatible with " + shape_str(s));
            sst[off + i] = as[i] == 1 ? 0 : ast[i];
        }
    }
    std::vector<int64_t> ost = strides_of(s);
    Arr<T> out(s);
    const T* pa = a.data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        int64_t rem = i, src = 0;
        for (size_t d = 0; d < s.size(); ++d) {
            int64_t idx = rem / ost[d];
            rem -= idx * ost[d];
            src += idx * sst[d];
        }
        out.data[i] = pa[src];
    }
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    int64_t on = numel(s);
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < on; ++i) {
            int64_t rem = i, src = 0;
            for (size_t d = 0; d < ost.size(); ++d) {
                int64_t idx = rem / ost[d];
                rem -= idx * ost[d];
                src += idx * sst[d];
            }
            ga.data[src] += g.data[i];
        }
    });
}

// Contiguous block [start, start+len) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    const Shape& as = a.shape();
    check(axis >= 0 && axis < static_cast<int>(as.size()), "slice: axis out of range");
    check(start >= 0 && len >= 0 && start + len <= as[axis],
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of bounds for axis size " + std::to_string(as[axis]));
    Shape os = as;
    os[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= as[i];
    for (size_t i = axis + 1; i < as.size(); ++i) inner *= as[i];
    Arr<T> out(os);
    const T* pa = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.ptr() + o * len * inner, pa + (o * as[axis] + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(T));
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    int64_t mid = as[axis];
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t o = 0; o < outer; ++o) {
            T* dst = ga.ptr() + (o * mid + start) * inner;
            const T* src = g.ptr() + o * len * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    check(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    check(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: axis out of range");
    int64_t total = 0;
    for (const Tensor<T>& p : parts) {
        const Shape& ps = p.shape();
        check(ps.size() == s0.size(), "concat: rank mismatch");
        for (size_t d = 0; d < ps.size(); ++d)
            check(static_cast<int>(d) == axis || ps[d] == s0[d],
                  "concat: shape mismatch " + shape_str(ps) + " vs " + shape_str(s0));
        total += ps[axis];
    }
    Shape os = s0;
    os[axis] = total;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[i];
    for (size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    Arr<T> out(os);
    int64_t at = 0;
    for (const Tensor<T>& p : parts) {
        int64_t len = p.shape()[axis];
        const T* src = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.ptr() + (o * total + at) * inner, src + o * len * inner,
                        static_cast<size_t>(len * inner) * sizeof(T));
        at += len;
    }
    std::vector<const Tensor<T>*> pp;
    for (const Tensor<T>& p : parts) pp.push_back(&p);
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* p : pp) {
        if (!p->tracked()) continue;
        if (tape == nullptr) tape = p->tape;
        else check(tape == p->tape, "concat: inputs live on different tapes");
    }
    struct Piece {
        int32_t node;
        int64_t at, len;
        bool tracked;
    };
    std::vector<Piece> pieces;
    int64_t cursor = 0;
    for (const Tensor<T>& p : parts) {
        pieces.push_back(Piece{p.node, cursor, p.shape()[axis], p.tracked()});
        cursor += p.shape()[axis];
    }
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        for (const Piece& pc : pieces) {
            if (!pc.tracked) continue;
            Arr<T>& gp = tp.grad_buf(pc.node);
            for (int64_t o = 0; o < outer; ++o) {
                const T* src = g.ptr() + (o * total + pc.at) * inner;
                T* dst = gp.ptr() + o * pc.len * inner;
                for (int64_t i = 0; i < pc.len * inner; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    const Shape& as = a.shape();
    check(as.size() == 2, "transpose: expected rank 2, got " + shape_str(as));
    int64_t m = as[0], n = as[1];
    Arr<T> out(Shape{n, m});
    const T* pa = a.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out.data[j * m + i] = pa[i * n + j];
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) ga.data[i * n + j] += g.data[j * m + i];
    });
}

// Flat-index gather; output is 1-D.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, std::vector<int64_t> idx) {
    for (int64_t k : idx)
        check(k >= 0 && k < a.numel(), "gather: index " + std::to_string(k) + " out of range");
    Arr<T> out(Shape{static_cast<int64_t>(idx.size())});
    const T* pa = a.data();
    for (size_t i = 0; i < idx.size(); ++i) out.data[i] = pa[idx[i]];
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    auto ix = std::make_shared<std::vector<int64_t>>(std::move(idx));
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (size_t i = 0; i < ix->size(); ++i) ga.data[(*ix)[i]] += g.data[i];
    });
}

// ---- reductions ----

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    const T* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
    Arr<T> out(Shape{1});
    out.data[0] = acc;
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < ga.numel(); ++i) ga.data[i] += g.data[0];
    });
}

namespace detail {

inline Shape reduced_shape(const Shape& s, const std::vector<int>& axes, bool keepdim) {
    std::vector<bool> red(s.size(), false);
    for (int ax : axes) {
        check(ax >= 0 && ax < static_cast<int>(s.size()), "reduce: axis out of range");
        red[ax] = true;
    }
    Shape os;
    for (size_t d = 0; d < s.size(); ++d) {
        if (red[d]) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(s[d]);
        }
    }
    if (os.empty()) os.push_back(1);
    return os;
}

// Map each input linear index to its output linear index under reduction.
inline std::vector<int64_t> reduce_out_strides(const Shape& s, const std::vector<int>& axes) {
    std::vector<bool> red(s.size(), false);
    for (int ax : axes) red[ax] = true;
    std::vector<int64_t> ost(s.size(), 0);
    int64_t stride = 1;
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        if (!red[d]) {
            ost[d] = stride;
            stride *= s[d];
        }
    }
    return ost;
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim = false) {
    const Shape& as = a.shape();
    Shape os = detail::reduced_shape(as, axes, keepdim);
    std::vector<int64_t> ist = strides_of(as);
    std::vector<int64_t> ost = detail::reduce_out_strides(as, axes);
    Arr<T> out(os);
    const T* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) {
        int64_t rem = i, dst = 0;
        for (size_t d = 0; d < as.size(); ++d) {
            int64_t idx = rem / ist[d];
            rem -= idx * ist[d];
            dst += idx * ost[d];
        }
        out.data[dst] += pa[i];
    }
    Tape<T>* tape = detail::common_tape<T>({&a});
    int32_t na = a.node;
    int64_t an = a.numel();
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        Arr<T>& ga = tp.grad_buf(na);
        for (int64_t i = 0; i < an; ++i) {
            int64_t rem = i, dst = 0;
            for (size_t d = 0; d < ist.size(); ++d) {
                int64_t idx = rem / ist[d];
                rem -= idx * ist[d];
                dst += idx * ost[d];
            }
            ga.data[i] += g.data[dst];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    check(a.numel() > 0, "mean: empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim = false) {
    int64_t n = 1;
    for (int ax : axes) n *= a.shape().at(ax);
    check(n > 0, "mean: empty reduction");
    return scale(sum(a, axes, keepdim), T(1) / static_cast<T>(n));
}

// ---- linear algebra ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    check(as.size() == 2 && bs.size() == 2 && as[1] == bs[0],
          "matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
    int64_t m = as[0], k = as[1], n = bs[1];
    Arr<T> out(Shape{m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < m; ++i) {
        T* orow = out.ptr() + i * n;
        for (int64_t l = 0; l < k; ++l) {
            T av = pa[i * k + l];
            const T* brow = pb + l * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    int32_t na = a.node, nb = b.node;
    bool ta = a.tracked(), tb = b.tracked();
    auto va = a.arr, vb = b.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        if (ta) {
            // dA = g . B^T
            Arr<T>& ga = tp.grad_buf(na);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t l = 0; l < k; ++l) {
                    T acc = 0;
                    const T* grow = g.ptr() + i * n;
                    const T* brow = vb->ptr() + l * n;
                    for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga.data[i * k + l] += acc;
                }
        }
        if (tb) {
            // dB = A^T . g
            Arr<T>& gb = tp.grad_buf(nb);
            for (int64_t i = 0; i < m; ++i) {
                const T* grow = g.ptr() + i * n;
                for (int64_t l = 0; l < k; ++l) {
                    T av = va->data[i * k + l];
                    T* brow = gb.ptr() + l * n;
                    for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
            }
        }
    });
}

// 2-D convolution, NCHW inputs, OIHW weights, fused bias. Zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    check(xs.size() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(xs));
    check(ws.size() == 4, "conv2d: weight must be [OC,IC,KH,KW], got " + shape_str(ws));
    check(xs[1] == ws[1], "conv2d: channel mismatch " + shape_str(xs) + " vs " + shape_str(ws));
    check(b.shape() == Shape{ws[0]}, "conv2d: bias must be [OC], got " + shape_str(b.shape()));
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    int64_t OC = ws[0], KH = ws[2], KW = ws[3];
    int64_t OH = (H + 2 * pad - KH) / stride + 1;
    int64_t OW = (W + 2 * pad - KW) / stride + 1;
    check(OH >= 1 && OW >= 1, "conv2d: kernel larger than padded input");

    Arr<T> out(Shape{N, OC, OH, OW});
    const T* px = x.data();
    const T* pw = w.data();
    const T* pb = b.data();
    // Valid output-column range for a kernel column kx: ix = ox*stride - pad + kx in [0, W).
    // Captures by value: the pullback closure outlives this frame.
    auto ox_range = [W, OW, stride, pad](int64_t kx, int64_t& lo, int64_t& hi) {
        int64_t off = kx - pad;
        lo = off < 0 ? ((-off) + stride - 1) / stride : 0;
        hi = OW;
        // Largest ox with ox*stride + off <= W-1.
        int64_t top = (W - 1 - off) / stride;
        if (top + 1 < hi) hi = top + 1;
        if (hi < lo) hi = lo;
    };
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t oc = 0; oc < OC; ++oc) {
            T* plane = out.ptr() + (n * OC + oc) * OH * OW;
            T bias = pb[oc];
            for (int64_t i = 0; i < OH * OW; ++i) plane[i] = bias;
            for (int64_t ic = 0; ic < C; ++ic) {
                const T* xplane = px + (n * C + ic) * H * W;
                for (int64_t ky = 0; ky < KH; ++ky) {
                    for (int64_t kx = 0; kx < KW; ++kx) {
                        T wv = pw[((oc * C + ic) * KH + ky) * KW + kx];
                        if (wv == T(0)) continue;
                        int64_t lo, hi;
                        ox_range(kx, lo, hi);
                        for (int64_t oy = 0; oy < OH; ++oy) {
                            int64_t iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            const T* xrow = xplane + iy * W;
                            T* orow = plane + oy * OW;
                            if (stride == 1) {
                                const T* xr = xrow + lo - pad + kx;
                                for (int64_t ox = lo; ox < hi; ++ox) orow[ox] += wv * xr[ox - lo];
                            } else {
                                for (int64_t ox = lo; ox < hi; ++ox)
                                    orow[ox] += wv * xrow[ox * stride - pad + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    Tape<T>* tape = detail::common_tape<T>({&x, &w, &b});
    bool tx = x.tracked(), tw = w.tracked(), tb_ = b.tracked();
    int32_t nx = x.node, nw = w.node, nb = b.node;
    auto vx = x.arr, vw = w.arr;
    return detail::make_result<T>(tape, std::move(out), [=](Tape<T>& tp, const Arr<T>& g) {
        if (tb_) {
            Arr<T>& gb = tp.grad_buf(nb);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t oc = 0; oc < OC; ++oc) {
                    const T* plane = g.ptr() + (n * OC + oc) * OH * OW;
                    T acc = 0;
                    for (int64_t i = 0; i < OH * OW; ++i) acc += plane[i];
                    gb.data[oc] += acc;
                }
        }
        if (tw) {
            Arr<T>& gw = tp.grad_buf(nw);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t oc = 0; oc < OC; ++oc) {
                    const T* gplane = g.ptr() + (n * OC + oc) * OH * OW;
                    for (int64_t ic = 0; ic < C; ++ic) {
                        const T* xplane = vx->ptr() + (n * C + ic) * H * W;
                        for (int64_t ky = 0; ky < KH; ++ky)
                            for (int64_t kx = 0; kx < KW; ++kx) {
                                int64_t lo, hi;
                                ox_range(kx, lo, hi);
                                T acc = 0;
                                for (int64_t oy = 0; oy < OH; ++oy) {
                                    int64_t iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    const T* xrow = xplane + iy * W;
                                    const T* grow = gplane + oy * OW;
                                    for (int64_t ox = lo; ox < hi; ++ox)
                                        acc += grow[ox] * xrow[ox * stride - pad + kx];
                                }
                                gw.data[((oc * C + ic) * KH + ky) * KW + kx] += acc;
                            }
                    }
                }
        }
        if (tx) {
            Arr<T>& gx = tp.grad_buf(nx);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t ic = 0; ic < C; ++ic) {
                    T* gxplane = gx.ptr() + (n * C + ic) * H * W;
                    for (int64_t oc = 0; oc < OC; ++oc) {
                        const T* gplane = g.ptr() + (n * OC + oc) * OH * OW;
                        for (int64_t ky = 0; ky < KH; ++ky)
                            for (int64_t kx = 0; kx < KW; ++kx) {
                                T wv = vw->data[((oc * C + ic) * KH + ky) * KW + kx];
                                if (wv == T(0)) continue;
                                int64_t lo, hi;
                                ox_range(kx, lo, hi);
                                for (int64_t oy = 0; oy < OH; ++oy) {
                                    int64_t iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    T* gxrow = gxplane + iy * W;
                                    const T* grow = gplane + oy * OW;
                                    if (stride == 1) {
                                        T* gr = gxrow + lo - pad + kx;
                                        for (int64_t ox = lo; ox < hi; ++ox) gr[ox - lo] += wv * grow[ox];
                                    } else {
                                        for (int64_t ox = lo; ox < hi; ++ox)
                                            gxrow[ox * stride - pad + kx] += wv * grow[ox];
                                    }
                                }
                            }
                    }
                }
        }
    });
}

// ---- graph control ----

// Same values, no history: the result is a plain constant.
template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
    Tensor<T> t;
    t.arr = a.arr;
    return t;
}

}  // namespace ag
