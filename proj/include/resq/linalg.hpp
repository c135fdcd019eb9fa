#pragma once

#include <cstdint>
#include <vector>

#include "resq/matrix.hpp"

namespace resq::linalg {

// Eigendecomposition of a real symmetric matrix. Eigenvalues ascending;
// column j of eigenvectors pairs with eigenvalue j.
struct EighResult {
    std::vector<double> eigenvalues;
    MatD eigenvectors;
};

// Rejects matrices that are not symmetric to 1e-8 relative. Small problems
// run cyclic Jacobi; larger ones go through Householder tridiagonalization
// plus implicit-shift QL, which the tests cross-check against Jacobi.
EighResult eigh_symmetric(const MatD& a);

// Exposed for cross-checking; eigh_symmetric picks between them by size.
EighResult eigh_jacobi(const MatD& a);
EighResult eigh_tridiag_ql(const MatD& a);

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the Q
// columns sign-corrected by the R diagonal.
MatD random_orthogonal(int dim, uint64_t seed);

// Orthonormal Hadamard matrix (entries +-1/sqrt(dim)). Supported dims are
// 2^k, 12*2^k and 20*2^k.
bool hadamard_supported(int dim);
MatD hadamard(int dim);

// In-place transform of each row (axis=1) or column (axis=0) by the
// orthonormal Hadamard matrix of that axis length, which must be a power of
// two. Returns the number of butterfly operations spent per transformed
// vector (n*log2(n)).
int64_t fast_hadamard_transform(MatF& x, int axis = 1);
int64_t fast_hadamard_transform(MatD& x, int axis = 1);

template <class T>
double fro_norm(const Mat<T>& x) {
    double s = 0.0;
    for (T v : x.a) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
}

template <class T>
double max_abs(const Mat<T>& x) {
    double m = 0.0;
    for (T v : x.a) m = std::max(m, std::fabs(static_cast<double>(v)));
    return m;
}

// max |A^T A - I|
template <class T>
double orthogonality_error(const Mat<T>& u) {
    Mat<T> g = matmul_tn(u, u);
    double worst = 0.0;
    for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
            double expect = (i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::fabs(static_cast<double>(g(i, j)) - expect));
        }
    return worst;
}

}  // namespace resq::linalg
