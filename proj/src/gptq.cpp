#include "resq/gptq.hpp"

#include <algorithm>
#include <cmath>

#include "resq/kernels.hpp"

namespace resq::gptq {

HessianEstimate HessianEstimate::from_stats(const proj::CalibStats& stats) {
    HessianEstimate h;
    h.h = stats.sum_outer;
    for (auto& v : h.h.a) v *= 2.0;
    return h;
}

HessianEstimate HessianEstimate::identity(int dim) {
    HessianEstimate h;
    h.h = MatD::identity(dim);
    return h;
}

HessianEstimate HessianEstimate::conjugated(const MatD& u) const {
    require(u.rows == h.rows, "Hessian conjugation: dim mismatch");
    HessianEstimate out;
    out.damping = damping;
    out.h = matmul_tn(u, matmul(h, u));
    return out;
}

namespace {

// lower-triangular Cholesky; throws on non-PD input
MatD cholesky_lower(const MatD& a) {
    const int n = a.rows;
    MatD l(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                require(s > 0.0, "gptq: Hessian not positive definite after damping (pivot " +
                                     std::to_string(s) + " at " + std::to_string(i) + ")");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

// inverse of a lower-triangular matrix
MatD lower_inverse(const MatD& l) {
    const int n = l.rows;
    MatD inv(n, n);
    for (int j = 0; j < n; ++j) {
        inv(j, j) = 1.0 / l(j, j);
        for (int i = j + 1; i < n; ++i) {
            double s = 0.0;
            for (int k = j; k < i; ++k) s -= l(i, k) * inv(k, j);
            inv(i, j) = s / l(i, i);
        }
    }
    return inv;
}

// upper Cholesky factor U of H^{-1} (H^{-1} = U^T U), the error-propagation
// coefficients of the column-sequential scheme
MatD inverse_upper_factor(const HessianEstimate& hess, MatF* w_dead_rows) {
    MatD hd = hess.h;
    const int n = hd.rows;
    double diag_mean = 0.0;
    for (int i = 0; i < n; ++i) {
        if (hd(i, i) == 0.0) {
            hd(i, i) = 1.0;  // dead input channel; weight row is irrelevant
            if (w_dead_rows)
                for (int j = 0; j < w_dead_rows->cols; ++j) (*w_dead_rows)(i, j) = 0.0f;
        }
        diag_mean += hd(i, i);
    }
    diag_mean /= n;
    const double damp = hess.damping * diag_mean;
    for (int i = 0; i < n; ++i) hd(i, i) += damp;

    MatD linv = lower_inverse(cholesky_lower(hd));
    MatD hinv = matmul_tn(linv, linv);
    return cholesky_lower(hinv).transposed();
}

struct ColumnScales {
    std::vector<float> s;      // per column
    std::vector<float> inv_s;  // 1/s in float, the encode path's constant
};

// per-channel symmetric scales over a row range of w, matching quantize()
ColumnScales column_scales(const MatF& w, int r0, int r1, int bits) {
    const int cmax = (1 << (bits - 1)) - 1;
    ColumnScales cs;
    cs.s.resize(w.cols);
    cs.inv_s.resize(w.cols);
    for (int j = 0; j < w.cols; ++j) {
        float m = 0.0f;
        for (int i = r0; i < r1; ++i) m = std::max(m, std::fabs(w(i, j)));
        const float s = (m == 0.0f) ? 1.0f : m / static_cast<float>(cmax);
        cs.s[j] = s;
        cs.inv_s[j] = 1.0f / s;
    }
    return cs;
}

struct RowGroup {
    int r0, r1, bits;
    ColumnScales scales;
};

// shared core: quantize rows in natural order, propagate rounding error
// through the inverse-Hessian factor
void gptq_core(MatD& work, const MatD& upper, const std::vector<RowGroup>& groups,
               std::vector<std::vector<int16_t>>& codes_out, int block) {
    const int d = work.rows, m = work.cols;
    require(block >= 1, "gptq: block must be >= 1");
    MatD err(std::min(block, d), m);

    auto group_of = [&](int row) -> const RowGroup& {
        for (const auto& g : groups)
            if (row >= g.r0 && row < g.r1) return g;
        throw Error("gptq: row outside all groups");
    };

    std::vector<float> rowf(m);
    std::vector<double> deq(m);

    for (int b0 = 0; b0 < d; b0 += block) {
        const int b1 = std::min(b0 + block, d);
        for (int i = b0; i < b1; ++i) {
            const RowGroup& g = group_of(i);
            const size_t gi = static_cast<size_t>(&g - groups.data());
            const int cmax = (1 << (g.bits - 1)) - 1;
            const int cmin = -cmax;
            // the float cast mirrors the plain quantizer's arithmetic exactly
            int16_t* crow = codes_out[gi].data() + static_cast<size_t>(i - g.r0) * m;
            for (int j = 0; j < m; ++j) {
                rowf[j] = static_cast<float>(work(i, j));
                float t = rowf[j] * g.scales.inv_s[j];
                int c = static_cast<int>(std::nearbyintf(t));
                crow[j] = static_cast<int16_t>(std::clamp(c, cmin, cmax));
                deq[j] = static_cast<double>(crow[j]) * static_cast<double>(g.scales.s[j]);
            }
            const double dinv = 1.0 / upper(i, i);
            double* e = err.row(i - b0);
            for (int j = 0; j < m; ++j) e[j] = (work(i, j) - deq[j]) * dinv;
            for (int k = i + 1; k < b1; ++k) {
                const double u = upper(i, k);
                if (u == 0.0) continue;
                double* wk = work.row(k);
                for (int j = 0; j < m; ++j) wk[j] -= u * e[j];
            }
        }
        // push the block's accumulated error onto the remaining rows
        for (int k = b1; k < d; ++k) {
            double* wk = work.row(k);
            for (int i = b0; i < b1; ++i) {
                const double u = upper(i, k);
                if (u == 0.0) continue;
                const double* e = err.row(i - b0);
                for (int j = 0; j < m; ++j) wk[j] -= u * e[j];
            }
        }
    }
}

quant::QuantizedTensor pack_group(const MatF& w, const RowGroup& g,
                                  std::vector<int16_t>&& codes) {
    quant::QuantizedTensor q;
    q.config.bits = g.bits;
    q.config.symmetric = true;
    q.config.granularity = quant::Granularity::PerChannel;
    q.rows = g.r1 - g.r0;
    q.cols = w.cols;
    q.codes = std::move(codes);
    q.scales = g.scales.s;
    q.zero_points.assign(w.cols, 0.0f);
    return q;
}

}  // namespace

namespace {

void check_spans(const std::vector<RowSpan>& spans, int rows) {
    require(!spans.empty(), "gptq: empty span list");
    int at = 0;
    for (const auto& s : spans) {
        require(s.r0 == at && s.r1 > s.r0, "gptq: spans must tile the rows contiguously");
        require(s.bits >= 2 && s.bits <= 8, "gptq: span bits out of range");
        at = s.r1;
    }
    require(at == rows, "gptq: spans do not cover all rows");
}

}  // namespace

std::vector<quant::QuantizedTensor> gptq_quantize_spans(const MatF& w,
                                                        const HessianEstimate& hess,
                                                        const std::vector<RowSpan>& spans,
                                                        int block) {
    require(hess.h.rows == w.rows, "gptq: Hessian dim " + std::to_string(hess.h.rows) +
                                       " must equal weight rows " + std::to_string(w.rows));
    require(w.finite(), "gptq: non-finite weights");
    check_spans(spans, w.rows);

    MatF wfix = w;
    MatD upper = inverse_upper_factor(hess, &wfix);
    std::vector<RowGroup> groups;
    groups.reserve(spans.size());
    for (const auto& s : spans)
        groups.push_back({s.r0, s.r1, s.bits, column_scales(wfix, s.r0, s.r1, s.bits)});

    std::vector<std::vector<int16_t>> codes(groups.size());
    for (size_t gi = 0; gi < groups.size(); ++gi)
        codes[gi].resize(static_cast<size_t>(groups[gi].r1 - groups[gi].r0) * w.cols);

    MatD work = wfix.cast<double>();
    gptq_core(work, upper, groups, codes, block);

    std::vector<quant::QuantizedTensor> out;
    out.reserve(groups.size());
    for (size_t gi = 0; gi < groups.size(); ++gi)
        out.push_back(pack_group(wfix, groups[gi], std::move(codes[gi])));
    return out;
}

std::vector<quant::QuantizedTensor> rtn_quantize_spans(const MatF& w,
                                                       const std::vector<RowSpan>& spans) {
    check_spans(spans, w.rows);
    quant::QuantConfig cfg;
    cfg.symmetric = true;
    cfg.granularity = quant::Granularity::PerChannel;
    std::vector<quant::QuantizedTensor> out;
    out.reserve(spans.size());
    for (const auto& s : spans)
        out.push_back(quant::quantize(w.row_slice(s.r0, s.r1), cfg.with_bits(s.bits)));
    return out;
}

MatF stack_spans(const std::vector<quant::QuantizedTensor>& parts) {
    require(!parts.empty(), "stack_spans: nothing to stack");
    int rows = 0;
    for (const auto& p : parts) rows += p.rows;
    MatF out(rows, parts[0].cols);
    int at = 0;
    for (const auto& p : parts) {
        MatF d = quant::dequantize(p);
        std::copy(d.a.begin(), d.a.end(), out.row(at));
        at += d.rows;
    }
    return out;
}

quant::QuantizedTensor gptq_quantize(const MatF& w, const HessianEstimate& hess,
                                     const quant::QuantConfig& cfg, int block) {
    require(cfg.symmetric && cfg.granularity == quant::Granularity::PerChannel,
            "gptq: weights use per-channel symmetric quantization");
    require(cfg.bits >= 2 && cfg.bits <= 8, "gptq: bits out of range");
    auto parts = gptq_quantize_spans(w, hess, {{0, w.rows, cfg.bits}}, block);
    return std::move(parts[0]);
}

MatF MixedQuantWeight::dequantized() const {
    MatF lo = quant::dequantize(low);
    if (high.rows == 0) return lo;
    MatF hi = quant::dequantize(high);
    MatF out(lo.rows + hi.rows, lo.cols);
    std::copy(lo.a.begin(), lo.a.end(), out.a.begin());
    std::copy(hi.a.begin(), hi.a.end(), out.a.begin() + lo.size());
    return out;
}

MixedQuantWeight gptq_quantize_mixed(const MatF& w, const HessianEstimate& hess, int bits_low,
                                     int bits_high, int split_row, int block) {
    require(split_row >= 0 && split_row <= w.rows, "gptq: bad split row");
    std::vector<RowSpan> spans{{0, split_row, bits_low}};
    if (split_row < w.rows) spans.push_back({split_row, w.rows, bits_high});
    auto parts = gptq_quantize_spans(w, hess, spans, block);
    MixedQuantWeight out;
    out.split_row = split_row;
    out.low = std::move(parts[0]);
    if (parts.size() > 1) out.high = std::move(parts[1]);
    return out;
}

MixedQuantWeight rtn_quantize_mixed(const MatF& w, int bits_low, int bits_high, int split_row) {
    require(split_row >= 0 && split_row <= w.rows, "rtn: bad split row");
    std::vector<RowSpan> spans{{0, split_row, bits_low}};
    if (split_row < w.rows) spans.push_back({split_row, w.rows, bits_high});
    auto parts = rtn_quantize_spans(w, spans);
    MixedQuantWeight out;
    out.split_row = split_row;
    out.low = std::move(parts[0]);
    if (parts.size() > 1) out.high = std::move(parts[1]);
    return out;
}

double hessian_weighted_error(const MatF& w, const MatF& wq, const MatD& h) {
    require(w.rows == wq.rows && w.cols == wq.cols && h.rows == w.rows,
            "hessian_weighted_error: shape mismatch");
    MatD d = (w - wq).cast<double>();
    MatD hd = matmul(h, d);
    double tr = 0.0;
    for (size_t i = 0; i < d.size(); ++i) tr += d.a[i] * hd.a[i];
    return tr;
}

}  // namespace resq::gptq
