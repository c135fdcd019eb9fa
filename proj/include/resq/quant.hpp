#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resq/matrix.hpp"

namespace resq::quant {

// Quantization group layout. Per-token groups rows, per-channel groups
// columns, per-head groups contiguous column blocks of head_dim within each
// row.
enum class Granularity { PerTensor, PerToken, PerChannel, PerHead };

struct QuantConfig {
    int bits = 4;  // 2..8 integer, 16 = pass-through
    bool symmetric = true;
    Granularity granularity = Granularity::PerTensor;
    int head_dim = 0;  // PerHead only

    QuantConfig with_bits(int b) const {
        QuantConfig c = *this;
        c.bits = b;
        return c;
    }
};

const char* granularity_name(Granularity g);

// Integer codes plus per-group scale/zero-point. Codes are kept unpacked in
// memory (int16 holds any 2..8-bit range, signed or not); the archive writer
// packs 4-bit codes into nibbles.
struct QuantizedTensor {
    std::vector<int16_t> codes;  // row-major, same shape as the source
    std::vector<float> scales;
    std::vector<float> zero_points;  // all zero when symmetric
    QuantConfig config;
    int rows = 0, cols = 0;

    int group_count() const { return static_cast<int>(scales.size()); }
};

// code range for a config: symmetric [-(2^{N-1}-1), 2^{N-1}-1], asymmetric [0, 2^N-1]
int code_min(const QuantConfig& cfg);
int code_max(const QuantConfig& cfg);

QuantizedTensor quantize(const MatF& x, const QuantConfig& cfg);
MatF dequantize(const QuantizedTensor& q);

// dequantize(quantize(x)); identity when bits == 16
MatF fake_quant(const MatF& x, const QuantConfig& cfg);

// 20*log10(|x|_F / |x - xq|_F), capped at +300 dB for exact reproduction;
// -inf when x is all-zero but the error is not.
double quant_snr(const MatF& x, const MatF& xq);

}  // namespace resq::quant
