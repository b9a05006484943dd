#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "trajrec/rng.hpp"

namespace trajrec {

// Dense row-major matrix of doubles. All model math runs at 64-bit precision
// so analytic gradients can be checked against central differences.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(std::size_t(r) * std::size_t(c), 0.0) {}

    double& operator()(int r, int c) { return a[std::size_t(r) * cols + c]; }
    double operator()(int r, int c) const { return a[std::size_t(r) * cols + c]; }

    double* row(int r) { return a.data() + std::size_t(r) * cols; }
    const double* row(int r) const { return a.data() + std::size_t(r) * cols; }

    std::size_t size() const { return a.size(); }

    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (double& v : a) v = rng.uniform(lo, hi);
    }

    // Glorot-style uniform init keyed to the matrix shape
    void fill_xavier(Rng& rng) {
        const double limit = std::sqrt(6.0 / double(rows + cols));
        fill_uniform(rng, -limit, limit);
    }

    bool all_finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline double dot(const double* x, const double* y, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

inline void axpy(double a, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// y = M x
inline void matvec(const Mat& m, const double* x, double* y) {
    for (int r = 0; r < m.rows; ++r) y[r] = dot(m.row(r), x, m.cols);
}

// y += M x
inline void matvec_add(const Mat& m, const double* x, double* y) {
    for (int r = 0; r < m.rows; ++r) y[r] += dot(m.row(r), x, m.cols);
}

// y += M^T x
inline void matvec_t_add(const Mat& m, const double* x, double* y) {
    for (int r = 0; r < m.rows; ++r) axpy(x[r], m.row(r), y, m.cols);
}

// G += u v^T
inline void outer_add(Mat& g, const double* u, const double* v) {
    for (int r = 0; r < g.rows; ++r) axpy(u[r], v, g.row(r), g.cols);
}

// softmax of x[0..n) into p[0..n), numerically stabilised
inline void softmax(const double* x, double* p, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(x[i] - mx);
        sum += p[i];
    }
    for (int i = 0; i < n; ++i) p[i] /= sum;
}

// given p = softmax(x) and dL/dp, accumulate dL/dx = p .* (dp - <dp, p>)
inline void softmax_backward(const double* p, const double* dp, double* dx, int n) {
    const double s = dot(dp, p, n);
    for (int i = 0; i < n; ++i) dx[i] += p[i] * (dp[i] - s);
}

} // namespace trajrec
