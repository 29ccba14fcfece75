#pragma once

// Dense row-major n-dimensional array of doubles. Everything in the
// pipeline (feature maps, fields, spectra) lives in these.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfrf/rng.hpp"

namespace sfrf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 2-d / 3-d accessors for the common H×W and C×H×W layouts.
    double& at2(std::size_t y, std::size_t x) { return data[y * shape[1] + x]; }
    double at2(std::size_t y, std::size_t x) const { return data[y * shape[1] + x]; }
    double& at3(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * shape[1] + y) * shape[2] + x];
    }
    double at3(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }
    double mean() const { return numel() ? sum() / static_cast<double>(numel()) : 0.0; }
    double max_abs() const {
        double m = 0.0;
        for (double v : data) m = std::max(m, std::abs(v));
        return m;
    }

    static Tensor random_normal(const Shape& s, Rng& rng, double stddev = 1.0) {
        Tensor t(s);
        for (auto& v : t.data) v = rng.normal() * stddev;
        return t;
    }
    static Tensor random_uniform(const Shape& s, Rng& rng, double lo = 0.0, double hi = 1.0) {
        Tensor t(s);
        for (auto& v : t.data) v = rng.uniform(lo, hi);
        return t;
    }
};

// Numpy-style broadcast of two shapes (aligned at the trailing axis).
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw std::invalid_argument("shapes not broadcast-compatible: " + shape_str(a) +
                                        " vs " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Row-major strides with zero stride on broadcast (extent-1) axes,
// padded on the left to the given rank.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, std::size_t out_rank) {
    std::vector<std::size_t> st(out_rank, 0);
    std::size_t acc = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t ax = s.size() - 1 - i;
        st[out_rank - 1 - i] = (s[ax] == 1) ? 0 : acc;
        acc *= s[ax];
    }
    return st;
}

}  // namespace sfrf
