#include "resq/mpgemm.hpp"

#include <cstdint>
#include <limits>

#include "resq/kernels.hpp"

namespace resq::mpgemm {

OpCount op_count(int n, int d, int m, int r, int /*bits_low*/, int /*bits_high*/) {
    require(r >= 0 && r <= d, "op_count: rank out of range");
    OpCount c;
    c.macs_low = static_cast<int64_t>(n) * m * (d - r);
    c.macs_high = static_cast<int64_t>(n) * m * r;
    c.proj_macs_dense = static_cast<int64_t>(n) * d * d;
    int log2d = 0;
    while ((1 << log2d) < d) ++log2d;
    c.proj_ops_fht = ((1 << log2d) == d) ? static_cast<int64_t>(n) * d * log2d : 0;
    return c;
}

namespace {

double scale_of(const quant::QuantizedTensor& q, int group) {
    return static_cast<double>(q.scales[group]);
}

void check_integer_compatible(const quant::QuantizedTensor& a, const quant::QuantizedTensor& b) {
    using quant::Granularity;
    require(a.config.symmetric && b.config.symmetric,
            "integer path requires symmetric quantization on both operands");
    require(a.config.granularity == Granularity::PerTensor ||
                a.config.granularity == Granularity::PerToken,
            "integer path: activations must be per-tensor or per-token");
    require(b.config.granularity == Granularity::PerTensor ||
                b.config.granularity == Granularity::PerChannel,
            "integer path: weights must be per-tensor or per-channel");
    // worst-case |sum| over the contraction must fit the simulated accumulator
    const int64_t worst = static_cast<int64_t>(a.cols) *
                          std::abs(static_cast<int64_t>(quant::code_min(a.config))) *
                          std::abs(static_cast<int64_t>(quant::code_min(b.config)));
    require(worst <= std::numeric_limits<int32_t>::max(),
            "integer path: 32-bit accumulator would overflow for this shape");
}

}  // namespace

namespace {

// dequantize straight into double; code * scale is exact there
MatD dequantize_f64(const quant::QuantizedTensor& q) {
    using quant::Granularity;
    MatD out(q.rows, q.cols);
    auto group_of = [&](int i, int j) -> int {
        switch (q.config.granularity) {
            case Granularity::PerTensor: return 0;
            case Granularity::PerToken: return i;
            case Granularity::PerChannel: return j;
            case Granularity::PerHead:
                return i * (q.cols / q.config.head_dim) + j / q.config.head_dim;
        }
        return 0;
    };
    for (int i = 0; i < q.rows; ++i)
        for (int j = 0; j < q.cols; ++j) {
            const int g = group_of(i, j);
            out(i, j) = static_cast<double>(q.codes[static_cast<size_t>(i) * q.cols + j]) *
                            static_cast<double>(q.scales[g]) +
                        static_cast<double>(q.zero_points[g]);
        }
    return out;
}

}  // namespace

MatD dequant_partial_product(const quant::QuantizedTensor& a, const quant::QuantizedTensor& b) {
    require(a.cols == b.rows, "partial product: inner dimensions disagree");
    return matmul(dequantize_f64(a), dequantize_f64(b));
}

MatD integer_partial_product(const quant::QuantizedTensor& a, const quant::QuantizedTensor& b) {
    require(a.cols == b.rows, "partial product: inner dimensions disagree");
    check_integer_compatible(a, b);
    const int m = a.rows, k = a.cols, n = b.cols;

    std::vector<int8_t> ca(a.codes.size()), cb(b.codes.size());
    for (size_t i = 0; i < ca.size(); ++i) ca[i] = static_cast<int8_t>(a.codes[i]);
    for (size_t i = 0; i < cb.size(); ++i) cb[i] = static_cast<int8_t>(b.codes[i]);

    std::vector<int32_t> acc(static_cast<size_t>(m) * n);
    kern::ops().gemm_i8_i32(ca.data(), cb.data(), acc.data(), m, k, n);

    // rank-1 rescale: row scale from the activations, column scale from the weights
    MatD out(m, n);
    const bool a_per_token = a.config.granularity == quant::Granularity::PerToken;
    const bool b_per_chan = b.config.granularity == quant::Granularity::PerChannel;
    for (int i = 0; i < m; ++i) {
        const double sa = scale_of(a, a_per_token ? i : 0);
        for (int j = 0; j < n; ++j) {
            const double sb = scale_of(b, b_per_chan ? j : 0);
            out(i, j) = static_cast<double>(acc[static_cast<size_t>(i) * n + j]) * (sa * sb);
        }
    }
    return out;
}

MatF mixed_matmul(const MatF& x, const MatF& w, const proj::ProjectionBasis& basis,
                  int bits_low, int bits_high, const quant::QuantConfig& act_cfg,
                  const quant::QuantConfig& wt_cfg, Path path) {
    require(x.cols == w.rows && w.rows == basis.dim(),
            "mixed_matmul: x cols, w rows and basis dim must agree");
    const int d = basis.dim(), r = basis.rank_high;

    MatF xp = proj::project(x, basis);
    MatF wp = matmul(basis.u.cast<float>().transposed(), w);

    if (bits_low == 16 && bits_high == 16) return matmul(xp, wp);

    auto partial = [&](int c0, int c1, int bits) {
        quant::QuantizedTensor qa = quant::quantize(xp.col_slice(c0, c1), act_cfg.with_bits(bits));
        quant::QuantizedTensor qw = quant::quantize(wp.row_slice(c0, c1), wt_cfg.with_bits(bits));
        return path == Path::Integer ? integer_partial_product(qa, qw)
                                     : dequant_partial_product(qa, qw);
    };

    MatD sum = partial(0, d - r, bits_low);
    if (r > 0) {
        MatD high = partial(d - r, d, bits_high);
        for (size_t i = 0; i < sum.size(); ++i) sum.a[i] += high.a[i];
    }
    return sum.cast<float>();
}

}  // namespace resq::mpgemm
