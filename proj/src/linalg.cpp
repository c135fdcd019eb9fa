#include "resq/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "resq/kernels.hpp"
#include "resq/rng.hpp"

namespace resq::linalg {

namespace {

constexpr int kJacobiMaxDim = 160;  // above this, tridiagonal + QL is used
constexpr int kJacobiMaxSweeps = 100;

void check_symmetric(const MatD& a) {
    require(a.rows == a.cols, "eigh: matrix not square");
    require(a.finite(), "eigh: non-finite input");
    const double scale = std::max(max_abs(a), 1e-300);
    for (int i = 0; i < a.rows; ++i)
        for (int j = i + 1; j < a.cols; ++j)
            if (std::fabs(a(i, j) - a(j, i)) > 1e-8 * scale) {
                std::ostringstream os;
                os << "eigh: input not symmetric at (" << i << "," << j << "): "
                   << a(i, j) << " vs " << a(j, i);
                throw Error(os.str());
            }
}

double off_diag_norm(const MatD& a) {
    double s = 0.0;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

// Sort ascending, stable in the solver's output order for ties.
EighResult sorted_result(std::vector<double> vals, const MatD& vt) {
    const int n = static_cast<int>(vals.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return vals[x] < vals[y]; });
    EighResult r;
    r.eigenvalues.resize(n);
    r.eigenvectors = MatD(n, n);
    for (int j = 0; j < n; ++j) {
        r.eigenvalues[j] = vals[order[j]];
        for (int i = 0; i < n; ++i) r.eigenvectors(i, j) = vt(order[j], i);
    }
    return r;
}

}  // namespace

EighResult eigh_jacobi(const MatD& input) {
    check_symmetric(input);
    const int n = input.rows;
    MatD a = input;
    MatD vt = MatD::identity(n);  // rows are eigenvector candidates
    std::vector<double> val(n);

    const double fro = fro_norm(a);
    const double thresh = 1e-12 * fro;

    for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
        double off = off_diag_norm(a);
        if (off <= thresh) {
            for (int i = 0; i < n; ++i) val[i] = a(i, i);
            return sorted_result(val, vt);
        }
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p), aqq = a(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                              : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int j = 0; j < n; ++j) {
                    if (j == p || j == q) continue;
                    const double ajp = a(j, p), ajq = a(j, q);
                    a(j, p) = a(p, j) = c * ajp - s * ajq;
                    a(j, q) = a(q, j) = s * ajp + c * ajq;
                }
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = a(q, p) = 0.0;
                kern::ops().rot_f64(vt.row(p), vt.row(q), n, c, s);
            }
        }
    }
    std::ostringstream os;
    os << "eigh: Jacobi did not converge in " << kJacobiMaxSweeps
       << " sweeps, off-diagonal residual " << off_diag_norm(a) << " (threshold " << thresh
       << ")";
    throw Error(os.str());
}

// Householder tridiagonalization with transform accumulation followed by
// implicit-shift QL. The eigenvector matrix is kept transposed so the QL
// plane rotations run on contiguous rows.
EighResult eigh_tridiag_ql(const MatD& input) {
    check_symmetric(input);
    const int n = input.rows;
    MatD a = input;
    std::vector<double> d(n, 0.0), e(n, 0.0);

    for (int i = n - 1; i >= 1; --i) {
        const int l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (int k = 0; k <= l; ++k) scale += std::fabs(a(i, k));
            if (scale == 0.0) {
                e[i] = a(i, l);
            } else {
                for (int k = 0; k <= l; ++k) {
                    a(i, k) /= scale;
                    h += a(i, k) * a(i, k);
                }
                double f = a(i, l);
                double g = (f >= 0.0) ? -std::sqrt(h) : std::sqrt(h);
                e[i] = scale * g;
                h -= f * g;
                a(i, l) = f - g;
                f = 0.0;
                for (int j = 0; j <= l; ++j) {
                    a(j, i) = a(i, j) / h;
                    g = 0.0;
                    for (int k = 0; k <= j; ++k) g += a(j, k) * a(i, k);
                    for (int k = j + 1; k <= l; ++k) g += a(k, j) * a(i, k);
                    e[j] = g / h;
                    f += e[j] * a(i, j);
                }
                const double hh = f / (h + h);
                for (int j = 0; j <= l; ++j) {
                    f = a(i, j);
                    e[j] = g = e[j] - hh * f;
                    for (int k = 0; k <= j; ++k) a(j, k) -= f * e[k] + g * a(i, k);
                }
            }
        } else {
            e[i] = a(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for (int i = 0; i < n; ++i) {
        if (d[i] != 0.0) {
            for (int j = 0; j < i; ++j) {
                double g = 0.0;
                for (int k = 0; k < i; ++k) g += a(i, k) * a(k, j);
                for (int k = 0; k < i; ++k) a(k, j) -= g * a(k, i);
            }
        }
        d[i] = a(i, i);
        a(i, i) = 1.0;
        for (int j = 0; j < i; ++j) a(j, i) = a(i, j) = 0.0;
    }

    // zt rows hold the accumulated transforms; zt = a^T
    MatD zt = a.transposed();

    for (int i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
                if (std::fabs(e[m]) <= 1e-300 || std::fabs(e[m]) <= 2.3e-16 * dd) break;
            }
            if (m != l) {
                if (iter++ == 60) {
                    std::ostringstream os;
                    os << "eigh: QL did not converge, residual " << std::fabs(e[l])
                       << " at index " << l;
                    throw Error(os.str());
                }
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                int i = m - 1;
                for (; i >= l; --i) {
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    kern::ops().rot_f64(zt.row(i), zt.row(i + 1), n, c, s);
                }
                if (r == 0.0 && i >= l) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }

    return sorted_result(d, zt);
}

EighResult eigh_symmetric(const MatD& a) {
    require(a.rows == a.cols, "eigh: matrix not square");
    return (a.rows <= kJacobiMaxDim) ? eigh_jacobi(a) : eigh_tridiag_ql(a);
}

MatD random_orthogonal(int dim, uint64_t seed) {
    require(dim >= 1, "random_orthogonal: dim must be >= 1");
    Rng rng(seed);
    const int n = dim;
    // column-major workspace so Householder columns are contiguous
    std::vector<double> a(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a[static_cast<size_t>(j) * n + i] = rng.gaussian();

    std::vector<double> vstore(static_cast<size_t>(n) * n, 0.0);
    std::vector<double> rdiag(n);

    for (int k = 0; k < n; ++k) {
        double* colk = &a[static_cast<size_t>(k) * n];
        double norm = 0.0;
        for (int i = k; i < n; ++i) norm += colk[i] * colk[i];
        norm = std::sqrt(norm);
        const double alpha = (colk[k] >= 0.0) ? -norm : norm;
        rdiag[k] = alpha;
        double* v = &vstore[static_cast<size_t>(k) * n];
        double vnorm2 = 0.0;
        for (int i = k; i < n; ++i) {
            v[i] = colk[i] - ((i == k) ? alpha : 0.0);
            vnorm2 += v[i] * v[i];
        }
        if (vnorm2 == 0.0) continue;
        const double inv = 2.0 / vnorm2;
        for (int j = k + 1; j < n; ++j) {
            double* colj = &a[static_cast<size_t>(j) * n];
            double dot = 0.0;
            for (int i = k; i < n; ++i) dot += v[i] * colj[i];
            dot *= inv;
            for (int i = k; i < n; ++i) colj[i] -= dot * v[i];
        }
    }

    // accumulate Q = H_0 ... H_{n-1} applied to I
    std::vector<double> q(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) q[static_cast<size_t>(i) * n + i] = 1.0;
    for (int k = n - 1; k >= 0; --k) {
        const double* v = &vstore[static_cast<size_t>(k) * n];
        double vnorm2 = 0.0;
        for (int i = k; i < n; ++i) vnorm2 += v[i] * v[i];
        if (vnorm2 == 0.0) continue;
        const double inv = 2.0 / vnorm2;
        for (int j = 0; j < n; ++j) {
            double* colj = &q[static_cast<size_t>(j) * n];
            double dot = 0.0;
            for (int i = k; i < n; ++i) dot += v[i] * colj[i];
            dot *= inv;
            for (int i = k; i < n; ++i) colj[i] -= dot * v[i];
        }
    }

    // sign-correct so the distribution is Haar
    MatD out(n, n);
    for (int j = 0; j < n; ++j) {
        const double flip = (rdiag[j] < 0.0) ? -1.0 : 1.0;
        for (int i = 0; i < n; ++i) out(i, j) = flip * q[static_cast<size_t>(j) * n + i];
    }
    return out;
}

namespace {

// Paley type-I core for q prime, q = 3 mod 4; yields H of size q+1.
MatD paley_hadamard(int q) {
    std::vector<int> chi(q, -1);
    chi[0] = 0;
    for (int t = 1; t < q; ++t) chi[(t * t) % q] = 1;
    const int n = q + 1;
    MatD h(n, n);
    for (int i = 0; i < n; ++i) h(0, i) = 1.0;
    for (int i = 1; i < n; ++i) h(i, 0) = -1.0;
    for (int i = 1; i < n; ++i)
        for (int j = 1; j < n; ++j) {
            if (i == j) {
                h(i, j) = 1.0;
            } else {
                int diff = ((i - j) % q + q) % q;
                h(i, j) = static_cast<double>(chi[diff]);
            }
        }
    return h;
}

// factor dim = base * 2^k with base in {1, 12, 20}; returns base or 0
int hadamard_base(int dim) {
    if (dim < 1) return 0;
    int m = dim;
    while (m % 2 == 0) m /= 2;
    if (m == 1) return 1;
    if (m == 3 && dim % 12 == 0) return 12;
    if (m == 5 && dim % 20 == 0) return 20;
    return 0;
}

}  // namespace

bool hadamard_supported(int dim) { return hadamard_base(dim) != 0; }

MatD hadamard(int dim) {
    const int base = hadamard_base(dim);
    require(base != 0,
            "hadamard: size " + std::to_string(dim) +
                " unsupported (need 2^k, 12*2^k or 20*2^k); use random_orthogonal instead");
    MatD h;
    if (base == 1) {
        h = MatD(1, 1);
        h(0, 0) = 1.0;
    } else {
        h = paley_hadamard(base - 1);
    }
    while (h.rows < dim) {
        const int m = h.rows;
        MatD g(2 * m, 2 * m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                const double v = h(i, j);
                g(i, j) = v;
                g(i, j + m) = v;
                g(i + m, j) = v;
                g(i + m, j + m) = -v;
            }
        h = std::move(g);
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& v : h.a) v *= norm;
    return h;
}

namespace {

template <class T>
int64_t fht_rows(Mat<T>& x) {
    const int n = x.cols;
    require(n > 0 && (n & (n - 1)) == 0,
            "fast_hadamard_transform: axis length " + std::to_string(n) +
                " is not a power of two; use the dense path");
    const T norm = static_cast<T>(1.0 / std::sqrt(static_cast<double>(n)));
    for (int i = 0; i < x.rows; ++i) {
        T* row = x.row(i);
        if constexpr (std::is_same_v<T, float>)
            kern::ops().fht_f32(row, n);
        else
            kern::ops().fht_f64(row, n);
        for (int j = 0; j < n; ++j) row[j] *= norm;
    }
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    return static_cast<int64_t>(n) * log2n;  // butterfly adds/subs per vector
}

}  // namespace

int64_t fast_hadamard_transform(MatF& x, int axis) {
    if (axis == 1) return fht_rows(x);
    MatF t = x.transposed();
    int64_t ops = fht_rows(t);
    x = t.transposed();
    return ops;
}

int64_t fast_hadamard_transform(MatD& x, int axis) {
    if (axis == 1) return fht_rows(x);
    MatD t = x.transposed();
    int64_t ops = fht_rows(t);
    x = t.transposed();
    return ops;
}

}  // namespace resq::linalg
