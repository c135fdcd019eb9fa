#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resq/matrix.hpp"
#include "resq/quant.hpp"

namespace resq::proj {

// Streaming second-moment accumulator. Also tracks per-channel max |x| for
// the l-inf outlier baseline.
struct CalibStats {
    int dim = 0;
    MatD sum_outer;  // sum over rows of x^T x, double accumulation
    std::vector<double> chan_max_abs;
    uint64_t count = 0;

    CalibStats() = default;
    explicit CalibStats(int d) : dim(d), sum_outer(d, d), chan_max_abs(d, 0.0) {}

    void accumulate(const MatF& x);
    void accumulate(const MatD& x);
    void merge(const CalibStats& other);
};

enum class BasisKind { Resq, Identity, RotationOnly, OutlierLinf, PcaOnly };

const char* basis_kind_name(BasisKind k);
BasisKind basis_kind_from_name(const std::string& name);

// Orthogonal d x d basis; by convention the LAST rank_high columns span the
// high-precision subspace.
struct ProjectionBasis {
    MatD u;
    int rank_high = 0;
    BasisKind kind = BasisKind::Identity;

    int dim() const { return u.rows; }
    MatD u_low() const { return u.col_slice(0, dim() - rank_high); }
    MatD u_high() const { return u.col_slice(dim() - rank_high, dim()); }
};

// U = P * blockdiag(R_l, R_h): P the covariance eigenvectors in ascending
// eigenvalue order, R blocks Haar-random. identity_rotations is a test hook
// that degenerates U to P.
ProjectionBasis build_resq_basis(const CalibStats& stats, int rank_high, uint64_t seed,
                                 bool identity_rotations = false);

// identity / rotation-only / outlier-linf / pca-only reference bases.
// OutlierLinf and PcaOnly need stats; the others accept nullptr.
ProjectionBasis build_baseline_basis(BasisKind kind, const CalibStats* stats, int dim,
                                     int rank_high, uint64_t seed);

// Upper bound on the expected mixed-precision quantization error of x under
// the given basis, Gaussian assumption. Needs rank_high >= 2 and
// dim - rank_high >= 2 and bits_low < bits_high.
double mixed_quant_error_bound(const MatF& x, const ProjectionBasis& basis, int bits_low, int bits_high);
double mixed_quant_error_bound_from_norms(double fro_x, double fro_x_ph, int dim, int rank_high,
                                 int bits_low, int bits_high);

// X * U in float
MatF project(const MatF& x, const ProjectionBasis& basis);

// [Q_L(X U_l) | Q_H(X U_h)] in the projected domain. 16/16 returns X * U.
// The template supplies symmetry and granularity (per-tensor, per-token or
// per-channel).
MatF mixed_fake_quant(const MatF& x, const ProjectionBasis& basis, int bits_low, int bits_high,
                      const quant::QuantConfig& tmpl);

}  // namespace resq::proj
