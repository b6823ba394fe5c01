#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/rng.hpp"

namespace iapl {

// Dense row-major tensor of arbitrary rank. Rank 0 is a scalar with one
// element.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) throw ArgumentError("tensor: data/shape mismatch");
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d < 0) throw ArgumentError("tensor: negative dim");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    int rows() const { return rank() >= 1 ? shape[0] : 1; }
    int cols() const { return rank() >= 2 ? shape[1] : 1; }

    T& operator()(int i) { return data[static_cast<size_t>(i)]; }
    const T& operator()(int i) const { return data[static_cast<size_t>(i)]; }
    T& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    const T& operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& x : data) x = static_cast<T>(rng.uniform(lo, hi));
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        t.fill(v);
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
inline bool all_finite(const Tensor<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename T>
inline double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ArgumentError("max_abs_diff: shape mismatch");
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace iapl
