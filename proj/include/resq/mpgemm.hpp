#pragma once

#include <cstdint>

#include "resq/projection.hpp"
#include "resq/quant.hpp"

namespace resq::mpgemm {

// Arithmetic accounting for one projected mixed-precision matmul
// (n x d) * (d x m) with r high-precision channels.
struct OpCount {
    int64_t macs_low = 0;          // low-precision channel MACs
    int64_t macs_high = 0;         // high-precision channel MACs
    int64_t proj_macs_dense = 0;   // activation-side projection, dense
    int64_t proj_ops_fht = 0;      // same projection as Hadamard butterflies

    double high_share() const {
        const int64_t t = macs_low + macs_high;
        return t ? static_cast<double>(macs_high) / static_cast<double>(t) : 0.0;
    }
};

OpCount op_count(int n, int d, int m, int r, int bits_low, int bits_high);

enum class Path { Reference, Integer };

// Q_L(X U_l) Q_L(U_l^T W) + Q_H(X U_h) Q_H(U_h^T W). Both paths produce the
// same value up to rounding: Reference dequantizes and multiplies, Integer
// accumulates codes in int32 and rescales afterwards (symmetric
// per-tensor/per-token activations x per-tensor/per-channel weights only).
MatF mixed_matmul(const MatF& x, const MatF& w, const proj::ProjectionBasis& basis,
                  int bits_low, int bits_high, const quant::QuantConfig& act_cfg,
                  const quant::QuantConfig& wt_cfg, Path path = Path::Reference);

// Single partial product in double, both routes. Exposed so the equivalence
// between them is testable at full precision.
MatD dequant_partial_product(const quant::QuantizedTensor& a, const quant::QuantizedTensor& b);
MatD integer_partial_product(const quant::QuantizedTensor& a, const quant::QuantizedTensor& b);

}  // namespace resq::mpgemm
