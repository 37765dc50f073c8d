#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "flowvc/common.hpp"

namespace flowvc {

// Dense row-major 2-D matrix of doubles. Frame sequences are rows x channels;
// vectors are 1 x C; scalars 1 x 1.
struct Tensor {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}

    static Tensor zeros(int64_t r, int64_t c) { return Tensor(r, c); }

    static Tensor full(int64_t r, int64_t c, double x) {
        Tensor t(r, c);
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }

    static Tensor randn(int64_t r, int64_t c, Rng& rng, double stddev = 1.0) {
        Tensor t(r, c);
        for (auto& x : t.v) x = stddev * rng.normal();
        return t;
    }

    int64_t size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
    double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b.v[i]));
    return m;
}

}  // namespace flowvc
