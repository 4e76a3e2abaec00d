#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vidcap/errors.hpp"
#include "vidcap/rng.hpp"

namespace vidcap {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_shape_valid(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto d : s)
        if (d < 1) throw ShapeError("tensor axes must be >= 1, got " + shape_str(s));
}

// Dense row-major float64 tensor. Values are treated as immutable once a
// graph references them; the grad buffer is the only mutable part.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data when requires_grad

    Tensor() : shape{1}, data(1, 0.0) {}

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        check_shape_valid(shape);
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        check_shape_valid(s);
        std::vector<double> v(static_cast<std::size_t>(shape_numel(s)), 0.0);
        return Tensor(std::move(s), std::move(v));
    }

    static Tensor full(Shape s, double value) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor randn(Shape s, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t = zeros(std::move(s));
        for (auto& x : t.data) x = rng.normal(mean, stddev);
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    Tensor& set_requires_grad(bool enable = true) {
        requires_grad = enable;
        if (enable)
            grad.assign(data.size(), 0.0);
        else
            grad.clear();
        return *this;
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    // 2-D accessors; most of the model works on matrices
    double& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace vidcap
