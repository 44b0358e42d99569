#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ag {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void check(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Dense row-major buffer with a shape. The only storage type in the engine.
template <typename T>
struct Arr {
    Shape shape;
    std::vector<T> data;

    Arr() = default;
    explicit Arr(Shape s) : shape(std::move(s)), data(static_cast<size_t>(ag::numel(shape)), T(0)) {}
    Arr(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check(static_cast<int64_t>(data.size()) == ag::numel(shape),
              "Arr: data size does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool empty() const { return data.empty(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
};

// Row-major strides for a shape.
inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

}  // namespace ag
