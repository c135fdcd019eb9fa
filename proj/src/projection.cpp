#include "resq/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "resq/linalg.hpp"
#include "resq/rng.hpp"

namespace resq::proj {

namespace {

template <class T>
void accumulate_impl(CalibStats& st, const Mat<T>& x) {
    require(x.cols == st.dim, "CalibStats: dimension mismatch (" + std::to_string(x.cols) +
                                  " vs " + std::to_string(st.dim) + ")");
    require(x.finite(), "CalibStats: non-finite activations");
    MatD xd = x.template cast<double>();
    MatD g = matmul_tn(xd, xd);
    for (size_t i = 0; i < g.size(); ++i) st.sum_outer.a[i] += g.a[i];
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j)
            st.chan_max_abs[j] = std::max(st.chan_max_abs[j],
                                          std::fabs(static_cast<double>(x(i, j))));
    st.count += x.rows;
}

}  // namespace

void CalibStats::accumulate(const MatF& x) { accumulate_impl(*this, x); }
void CalibStats::accumulate(const MatD& x) { accumulate_impl(*this, x); }

void CalibStats::merge(const CalibStats& other) {
    require(dim == other.dim, "CalibStats::merge: dimension mismatch");
    for (size_t i = 0; i < sum_outer.size(); ++i) sum_outer.a[i] += other.sum_outer.a[i];
    for (int j = 0; j < dim; ++j) chan_max_abs[j] = std::max(chan_max_abs[j], other.chan_max_abs[j]);
    count += other.count;
}

const char* basis_kind_name(BasisKind k) {
    switch (k) {
        case BasisKind::Resq: return "resq";
        case BasisKind::Identity: return "identity";
        case BasisKind::RotationOnly: return "rotation";
        case BasisKind::OutlierLinf: return "outlier";
        case BasisKind::PcaOnly: return "pca";
    }
    return "?";
}

BasisKind basis_kind_from_name(const std::string& name) {
    if (name == "resq") return BasisKind::Resq;
    if (name == "identity") return BasisKind::Identity;
    if (name == "rotation") return BasisKind::RotationOnly;
    if (name == "outlier") return BasisKind::OutlierLinf;
    if (name == "pca") return BasisKind::PcaOnly;
    throw Error("unknown basis kind '" + name + "' (want resq|identity|rotation|outlier|pca)");
}

namespace {

void check_rank(int dim, int r) {
    require(r >= 1 && r < dim, "rank_high " + std::to_string(r) + " out of range for dim " +
                                   std::to_string(dim));
}

// U = cols * blockdiag(R_l, R_h)
MatD apply_block_rotations(const MatD& p, int r, uint64_t seed_l, uint64_t seed_h) {
    const int d = p.rows;
    MatD u(d, d);
    MatD pl = p.col_slice(0, d - r);
    MatD ph = p.col_slice(d - r, d);
    MatD ul = matmul(pl, linalg::random_orthogonal(d - r, seed_l));
    MatD uh = matmul(ph, linalg::random_orthogonal(r, seed_h));
    for (int i = 0; i < d; ++i) {
        std::copy(ul.row(i), ul.row(i) + d - r, u.row(i));
        std::copy(uh.row(i), uh.row(i) + r, u.row(i) + d - r);
    }
    return u;
}

MatD pca_basis(const CalibStats& stats) {
    require(stats.count >= 1, "basis: empty calibration stats");
    if (stats.count < static_cast<uint64_t>(stats.dim))
        std::fprintf(stderr,
                     "warning: calibration rows (%llu) below dimension (%d); covariance is "
                     "rank-deficient\n",
                     static_cast<unsigned long long>(stats.count), stats.dim);
    return linalg::eigh_symmetric(stats.sum_outer).eigenvectors;
}

}  // namespace

ProjectionBasis build_resq_basis(const CalibStats& stats, int rank_high, uint64_t seed,
                                 bool identity_rotations) {
    check_rank(stats.dim, rank_high);
    MatD p = pca_basis(stats);
    ProjectionBasis b;
    b.rank_high = rank_high;
    b.kind = BasisKind::Resq;
    if (identity_rotations) {
        b.u = std::move(p);
        return b;
    }
    Rng rng(seed);
    const uint64_t seed_l = rng.next_u64(), seed_h = rng.next_u64();
    b.u = apply_block_rotations(p, rank_high, seed_l, seed_h);
    return b;
}

ProjectionBasis build_baseline_basis(BasisKind kind, const CalibStats* stats, int dim,
                                     int rank_high, uint64_t seed) {
    check_rank(dim, rank_high);
    ProjectionBasis b;
    b.rank_high = rank_high;
    b.kind = kind;
    switch (kind) {
        case BasisKind::Identity:
            b.u = MatD::identity(dim);
            return b;
        case BasisKind::RotationOnly:
            b.u = linalg::random_orthogonal(dim, seed);
            return b;
        case BasisKind::PcaOnly:
            require(stats != nullptr, "pca basis needs calibration stats");
            require(stats->dim == dim, "pca basis: stats dim mismatch");
            b.u = pca_basis(*stats);
            return b;
        case BasisKind::OutlierLinf: {
            require(stats != nullptr, "outlier basis needs calibration stats");
            require(stats->dim == dim, "outlier basis: stats dim mismatch");
            // rank channels by max |x|; top-r move to the high slots
            std::vector<int> order(dim);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
                return stats->chan_max_abs[a] < stats->chan_max_abs[c];
            });
            std::vector<int> low(order.begin(), order.end() - rank_high);
            std::vector<int> high(order.end() - rank_high, order.end());
            std::sort(low.begin(), low.end());
            std::sort(high.begin(), high.end());
            MatD perm(dim, dim);
            for (int j = 0; j < dim - rank_high; ++j) perm(low[j], j) = 1.0;
            for (int j = 0; j < rank_high; ++j) perm(high[j], dim - rank_high + j) = 1.0;
            Rng rng(seed);
            const uint64_t seed_l = rng.next_u64(), seed_h = rng.next_u64();
            b.u = apply_block_rotations(perm, rank_high, seed_l, seed_h);
            return b;
        }
        case BasisKind::Resq:
            require(stats != nullptr, "resq basis needs calibration stats");
            return build_resq_basis(*stats, rank_high, seed);
    }
    throw Error("unknown basis kind");
}

double mixed_quant_error_bound_from_norms(double fro_x, double fro_x_ph, int dim, int rank_high,
                                 int bits_low, int bits_high) {
    require(rank_high >= 2, "mixed_quant_error_bound: rank_high must be >= 2 (log of rank appears in the "
                            "high-precision term)");
    require(dim - rank_high >= 2, "mixed_quant_error_bound: dim - rank_high must be >= 2");
    require(bits_low < bits_high, "mixed_quant_error_bound: bits_low must be < bits_high");
    const double ca =
        std::sqrt(M_PI * std::log(static_cast<double>(dim - rank_high))) /
        (static_cast<double>(1 << (bits_low - 1)) - 1.0);
    const double cb = std::sqrt(M_PI * std::log(static_cast<double>(rank_high))) /
                      (static_cast<double>(1 << (bits_high - 1)) - 1.0);
    return ca * fro_x - (ca - cb) * fro_x_ph;
}

double mixed_quant_error_bound(const MatF& x, const ProjectionBasis& basis, int bits_low, int bits_high) {
    require(x.cols == basis.dim(), "mixed_quant_error_bound: shape mismatch");
    MatD xd = x.cast<double>();
    MatD xph = matmul(xd, basis.u_high());
    return mixed_quant_error_bound_from_norms(linalg::fro_norm(xd), linalg::fro_norm(xph), basis.dim(),
                                     basis.rank_high, bits_low, bits_high);
}

MatF project(const MatF& x, const ProjectionBasis& basis) {
    require(x.cols == basis.dim(), "project: basis dim " + std::to_string(basis.dim()) +
                                       " does not match cols " + std::to_string(x.cols));
    if (basis.kind == BasisKind::Identity) return x;
    return matmul(x, basis.u.cast<float>());
}

MatF mixed_fake_quant(const MatF& x, const ProjectionBasis& basis, int bits_low, int bits_high,
                      const quant::QuantConfig& tmpl) {
    require(tmpl.granularity != quant::Granularity::PerHead,
            "mixed_fake_quant: per-head granularity is handled by per-head slicing");
    MatF p = project(x, basis);
    if (bits_low == 16 && bits_high == 16) return p;
    const int d = basis.dim(), r = basis.rank_high;
    MatF lo = quant::fake_quant(p.col_slice(0, d - r), tmpl.with_bits(bits_low));
    MatF hi = quant::fake_quant(p.col_slice(d - r, d), tmpl.with_bits(bits_high));
    MatF out(x.rows, d);
    for (int i = 0; i < x.rows; ++i) {
        std::copy(lo.row(i), lo.row(i) + d - r, out.row(i));
        std::copy(hi.row(i), hi.row(i) + r, out.row(i) + d - r);
    }
    return out;
}

}  // namespace resq::proj
