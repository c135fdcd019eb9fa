#include "resq/quant.hpp"

#include <cmath>
#include <limits>

#include "resq/kernels.hpp"
#include "resq/linalg.hpp"

namespace resq::quant {

const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::PerTensor: return "per-tensor";
        case Granularity::PerToken: return "per-token";
        case Granularity::PerChannel: return "per-channel";
        case Granularity::PerHead: return "per-head";
    }
    return "?";
}

int code_min(const QuantConfig& cfg) { return cfg.symmetric ? -((1 << (cfg.bits - 1)) - 1) : 0; }
int code_max(const QuantConfig& cfg) {
    return cfg.symmetric ? ((1 << (cfg.bits - 1)) - 1) : ((1 << cfg.bits) - 1);
}

namespace {

void check_cfg(const MatF& x, const QuantConfig& cfg) {
    require(cfg.bits >= 2 && cfg.bits <= 8,
            "quantize: bits must be in [2, 8] (got " + std::to_string(cfg.bits) + ")");
    require(x.finite(), "quantize: non-finite input");
    if (cfg.granularity == Granularity::PerHead) {
        require(cfg.head_dim > 0 && x.cols % cfg.head_dim == 0,
                "quantize: per-head needs cols (" + std::to_string(x.cols) +
                    ") divisible by head_dim (" + std::to_string(cfg.head_dim) + ")");
    }
}

// scale/zero-point of one contiguous span; degenerate spans get s=1 and the
// zero-point code
struct GroupParams {
    float s, z;
};

GroupParams group_params(const float* x, int n, const QuantConfig& cfg) {
    const auto& k = kern::ops();
    if (cfg.symmetric) {
        float m = k.absmax_f32(x, n);
        if (m == 0.0f) return {1.0f, 0.0f};
        return {m / static_cast<float>(code_max(cfg)), 0.0f};
    }
    float lo, hi;
    k.minmax_f32(x, n, &lo, &hi);
    lo += 0.0f;  // flush -0
    if (hi <= lo) return {1.0f, lo};
    return {(hi - lo) / static_cast<float>(code_max(cfg)), lo};
}

void encode_span(const float* x, int16_t* codes, int n, GroupParams p, const QuantConfig& cfg) {
    const float inv_s = 1.0f / p.s;
    kern::ops().encode_f32(x, n, inv_s, p.z, code_min(cfg), code_max(cfg), codes);
}

}  // namespace

QuantizedTensor quantize(const MatF& x, const QuantConfig& cfg) {
    check_cfg(x, cfg);
    QuantizedTensor q;
    q.config = cfg;
    q.rows = x.rows;
    q.cols = x.cols;
    q.codes.resize(x.size());

    switch (cfg.granularity) {
        case Granularity::PerTensor: {
            GroupParams p = group_params(x.a.data(), static_cast<int>(x.size()), cfg);
            q.scales = {p.s};
            q.zero_points = {p.z};
            encode_span(x.a.data(), q.codes.data(), static_cast<int>(x.size()), p, cfg);
            break;
        }
        case Granularity::PerToken: {
            q.scales.resize(x.rows);
            q.zero_points.resize(x.rows);
            for (int i = 0; i < x.rows; ++i) {
                GroupParams p = group_params(x.row(i), x.cols, cfg);
                q.scales[i] = p.s;
                q.zero_points[i] = p.z;
                encode_span(x.row(i), &q.codes[static_cast<size_t>(i) * x.cols], x.cols, p, cfg);
            }
            break;
        }
        case Granularity::PerChannel: {
            q.scales.resize(x.cols);
            q.zero_points.resize(x.cols);
            std::vector<float> col(x.rows);
            std::vector<int16_t> ccodes(x.rows);
            for (int j = 0; j < x.cols; ++j) {
                for (int i = 0; i < x.rows; ++i) col[i] = x(i, j);
                GroupParams p = group_params(col.data(), x.rows, cfg);
                q.scales[j] = p.s;
                q.zero_points[j] = p.z;
                encode_span(col.data(), ccodes.data(), x.rows, p, cfg);
                for (int i = 0; i < x.rows; ++i)
                    q.codes[static_cast<size_t>(i) * x.cols + j] = ccodes[i];
            }
            break;
        }
        case Granularity::PerHead: {
            const int heads = x.cols / cfg.head_dim;
            q.scales.resize(static_cast<size_t>(x.rows) * heads);
            q.zero_points.resize(q.scales.size());
            for (int i = 0; i < x.rows; ++i) {
                for (int h = 0; h < heads; ++h) {
                    const float* span = x.row(i) + h * cfg.head_dim;
                    GroupParams p = group_params(span, cfg.head_dim, cfg);
                    const size_t g = static_cast<size_t>(i) * heads + h;
                    q.scales[g] = p.s;
                    q.zero_points[g] = p.z;
                    encode_span(span,
                                &q.codes[static_cast<size_t>(i) * x.cols + h * cfg.head_dim],
                                cfg.head_dim, p, cfg);
                }
            }
            break;
        }
    }
    return q;
}

MatF dequantize(const QuantizedTensor& q) {
    MatF out(q.rows, q.cols);
    const auto& k = kern::ops();
    switch (q.config.granularity) {
        case Granularity::PerTensor:
            k.decode_f32(q.codes.data(), static_cast<int>(q.codes.size()), q.scales[0],
                         q.zero_points[0], out.a.data());
            break;
        case Granularity::PerToken:
            for (int i = 0; i < q.rows; ++i)
                k.decode_f32(&q.codes[static_cast<size_t>(i) * q.cols], q.cols, q.scales[i],
                             q.zero_points[i], out.row(i));
            break;
        case Granularity::PerChannel: {
            std::vector<int16_t> col(q.rows);
            std::vector<float> dec(q.rows);
            for (int j = 0; j < q.cols; ++j) {
                for (int i = 0; i < q.rows; ++i) col[i] = q.codes[static_cast<size_t>(i) * q.cols + j];
                k.decode_f32(col.data(), q.rows, q.scales[j], q.zero_points[j], dec.data());
                for (int i = 0; i < q.rows; ++i) out(i, j) = dec[i];
            }
            break;
        }
        case Granularity::PerHead: {
            const int heads = q.cols / q.config.head_dim;
            for (int i = 0; i < q.rows; ++i)
                for (int h = 0; h < heads; ++h) {
                    const size_t g = static_cast<size_t>(i) * heads + h;
                    k.decode_f32(&q.codes[static_cast<size_t>(i) * q.cols + h * q.config.head_dim],
                                 q.config.head_dim, q.scales[g], q.zero_points[g],
                                 out.row(i) + h * q.config.head_dim);
                }
            break;
        }
    }
    return out;
}

MatF fake_quant(const MatF& x, const QuantConfig& cfg) {
    if (cfg.bits == 16) return x;
    return dequantize(quantize(x, cfg));
}

double quant_snr(const MatF& x, const MatF& xq) {
    require(x.rows == xq.rows && x.cols == xq.cols, "quant_snr: shape mismatch");
    const double sig = linalg::fro_norm(x);
    const double err = linalg::fro_norm(x - xq);
    if (err == 0.0) return 300.0;
    if (sig == 0.0) return -std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(sig / err);
}

}  // namespace resq::quant
