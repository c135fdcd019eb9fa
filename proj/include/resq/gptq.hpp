#pragma once

#include "resq/projection.hpp"
#include "resq/quant.hpp"

namespace resq::gptq {

// Input-side Hessian H = 2 * sum x^T x over calibration rows. Damped with
// damping * mean(diag) before factorization.
struct HessianEstimate {
    MatD h;
    double damping = 0.01;

    static HessianEstimate from_stats(const proj::CalibStats& stats);
    static HessianEstimate identity(int dim);

    // Hessian of the projected input space: U^T H U
    HessianEstimate conjugated(const MatD& u) const;
};

// Row-sequential rounding of w (rows = input channels = Hessian dim) with
// inverse-Hessian error propagation, natural order, per-channel symmetric
// scales from the original weights. With an identity Hessian the codes equal
// plain round-to-nearest.
quant::QuantizedTensor gptq_quantize(const MatF& w, const HessianEstimate& hess,
                                     const quant::QuantConfig& cfg, int block = 128);

// General row grouping: contiguous spans covering [0, rows), each with its
// own bit width and per-channel scales. Error compensation flows across the
// whole matrix regardless of the grouping (one span per precision region,
// e.g. per-head low/high interleavings for the attention output projection).
struct RowSpan {
    int r0 = 0, r1 = 0;
    int bits = 4;
};

std::vector<quant::QuantizedTensor> gptq_quantize_spans(const MatF& w,
                                                        const HessianEstimate& hess,
                                                        const std::vector<RowSpan>& spans,
                                                        int block = 128);
std::vector<quant::QuantizedTensor> rtn_quantize_spans(const MatF& w,
                                                       const std::vector<RowSpan>& spans);
MatF stack_spans(const std::vector<quant::QuantizedTensor>& parts);

// Two-way split: rows [0, split_row) at bits_low, the rest at bits_high.
// split_row == rows gives a uniform low-precision result.
struct MixedQuantWeight {
    quant::QuantizedTensor low, high;
    int split_row = 0;

    MatF dequantized() const;
};

MixedQuantWeight gptq_quantize_mixed(const MatF& w, const HessianEstimate& hess, int bits_low,
                                     int bits_high, int split_row, int block = 128);
MixedQuantWeight rtn_quantize_mixed(const MatF& w, int bits_low, int bits_high, int split_row);

// tr((w - wq)^T H (w - wq))
double hessian_weighted_error(const MatF& w, const MatF& wq, const MatD& h);

}  // namespace resq::gptq
