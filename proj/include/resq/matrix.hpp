#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "resq/common.hpp"
#include "resq/kernels.hpp"
#include "resq/rng.hpp"

namespace resq {

// Dense row-major matrix. Model tensors default to float; covariance and
// eigenwork use the double instantiation.
template <class T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, T(0)) {
        require(r >= 0 && c >= 0, "Mat: negative dimensions");
    }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    T& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    const T& operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
    T* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const T* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
    size_t size() const { return a.size(); }

    bool finite() const {
        for (T v : a)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Mat transposed() const {
        Mat t(cols, rows);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    // columns [c0, c1)
    Mat col_slice(int c0, int c1) const {
        require(0 <= c0 && c0 <= c1 && c1 <= cols, "col_slice: bad range");
        Mat s(rows, c1 - c0);
        for (int i = 0; i < rows; ++i)
            std::copy(row(i) + c0, row(i) + c1, s.row(i));
        return s;
    }

    // rows [r0, r1)
    Mat row_slice(int r0, int r1) const {
        require(0 <= r0 && r0 <= r1 && r1 <= rows, "row_slice: bad range");
        Mat s(r1 - r0, cols);
        std::copy(row(r0), row(r0) + s.size(), s.a.data());
        return s;
    }

    template <class U>
    Mat<U> cast() const {
        Mat<U> m(rows, cols);
        for (size_t i = 0; i < a.size(); ++i) m.a[i] = static_cast<U>(a[i]);
        return m;
    }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

namespace detail {
inline void gemm(const float* a, const float* b, float* c, int m, int k, int n) {
    kern::ops().gemm_f32(a, b, c, m, k, n);
}
inline void gemm(const double* a, const double* b, double* c, int m, int k, int n) {
    kern::ops().gemm_f64(a, b, c, m, k, n);
}
}  // namespace detail

// Row blocks go to the worker threads (capped by RESQ_THREADS); every output
// row is written by exactly one worker, so the result does not depend on the
// thread count.
template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    require(a.cols == b.rows, "matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                                  " vs " + std::to_string(b.rows) + ")");
    Mat<T> c(a.rows, b.cols);
    parallel_for(a.rows, [&](int64_t r0, int64_t r1) {
        detail::gemm(a.row(static_cast<int>(r0)), b.a.data(), c.row(static_cast<int>(r0)),
                     static_cast<int>(r1 - r0), a.cols, b.cols);
    });
    return c;
}

// a^T * b without materializing the transpose of b
template <class T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
    return matmul(a.transposed(), b);
}

template <class T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
    return matmul(a, b.transposed());
}

template <class T>
Mat<T> operator-(const Mat<T>& x, const Mat<T>& y) {
    require(x.rows == y.rows && x.cols == y.cols, "operator-: shape mismatch");
    Mat<T> r(x.rows, x.cols);
    for (size_t i = 0; i < r.size(); ++i) r.a[i] = x.a[i] - y.a[i];
    return r;
}

template <class T>
Mat<T> operator+(const Mat<T>& x, const Mat<T>& y) {
    require(x.rows == y.rows && x.cols == y.cols, "operator+: shape mismatch");
    Mat<T> r(x.rows, x.cols);
    for (size_t i = 0; i < r.size(); ++i) r.a[i] = x.a[i] + y.a[i];
    return r;
}

template <class T>
Mat<T> gaussian_matrix(int rows, int cols, Rng& rng) {
    Mat<T> m(rows, cols);
    for (auto& v : m.a) v = static_cast<T>(rng.gaussian());
    return m;
}

}  // namespace resq
