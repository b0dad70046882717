#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace synb {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major value tensor. Autograd lives in autograd.hpp; this type is
// also used standalone (datasets, eval features, finite differences).
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), v(static_cast<std::size_t>(numel(shape)), T(0)) {}
    Tensor(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<long>(v.size()) != numel(shape))
            throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
    }

    long size() const { return static_cast<long>(v.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& at(long i) { return v[static_cast<std::size_t>(i)]; }
    const T& at(long i) const { return v[static_cast<std::size_t>(i)]; }

    static Tensor<T> full(Shape s, T value) {
        Tensor<T> t(std::move(s));
        for (auto& x : t.v) x = value;
        return t;
    }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (long i = 0; i < size(); ++i) out.v[static_cast<std::size_t>(i)] = static_cast<U>(v[static_cast<std::size_t>(i)]);
        return out;
    }
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace synb
