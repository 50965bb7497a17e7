#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "crlab/errors.hpp"

namespace crlab {

// Dense row-major matrix of doubles. All training numerics run in 64-bit.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return data.size(); }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// y = W x  (W: out x in, x: in, y: out). Accumulation order is fixed so
// results are bitwise stable.
inline void matvec(const Matrix& w, const double* x, double* y) {
    for (std::size_t o = 0; o < w.rows; ++o) {
        const double* wr = w.row(o);
        double acc = 0.0;
        for (std::size_t i = 0; i < w.cols; ++i) {
            acc += wr[i] * x[i];
        }
        y[o] = acc;
    }
}

// y += W x
inline void matvec_add(const Matrix& w, const double* x, double* y) {
    for (std::size_t o = 0; o < w.rows; ++o) {
        const double* wr = w.row(o);
        double acc = 0.0;
        for (std::size_t i = 0; i < w.cols; ++i) {
            acc += wr[i] * x[i];
        }
        y[o] += acc;
    }
}

// y = W^T x  (W: out x in, x: out, y: in).
inline void matvec_transpose(const Matrix& w, const double* x, double* y) {
    for (std::size_t i = 0; i < w.cols; ++i) {
        y[i] = 0.0;
    }
    for (std::size_t o = 0; o < w.rows; ++o) {
        const double* wr = w.row(o);
        const double xo = x[o];
        if (xo == 0.0) {
            continue;
        }
        for (std::size_t i = 0; i < w.cols; ++i) {
            y[i] += wr[i] * xo;
        }
    }
}

// y += W^T x
inline void matvec_transpose_add(const Matrix& w, const double* x, double* y) {
    for (std::size_t o = 0; o < w.rows; ++o) {
        const double* wr = w.row(o);
        const double xo = x[o];
        if (xo == 0.0) {
            continue;
        }
        for (std::size_t i = 0; i < w.cols; ++i) {
            y[i] += wr[i] * xo;
        }
    }
}

// C += a b^T  (a: rows, b: cols). Rank-one accumulation for weight grads.
inline void add_outer(Matrix& c, const double* a, const double* b) {
    for (std::size_t r = 0; r < c.rows; ++r) {
        double* cr = c.row(r);
        const double ar = a[r];
        if (ar == 0.0) {
            continue;
        }
        for (std::size_t k = 0; k < c.cols; ++k) {
            cr[k] += ar * b[k];
        }
    }
}

// C = A * B (A: m x k, B: k x n).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw DimensionError("matmul shape mismatch");
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double av = ar[k];
            if (av == 0.0) {
                continue;
            }
            const double* br = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                cr[j] += av * br[j];
            }
        }
    }
    return c;
}

}  // namespace crlab
