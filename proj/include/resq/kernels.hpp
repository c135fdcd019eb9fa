#pragma once

#include <cstdint>

namespace resq::kern {

// Runtime-dispatched inner loops. Every entry has a scalar reference
// implementation and an AVX2 variant; the active table is chosen once from
// CPUID and can be overridden for equivalence testing.
//
// Bitwise contract: minmax/absmax/encode/decode/fht/rot and the integer GEMM
// produce identical bits on every ISA (same operations in the same order per
// element). The float GEMMs use FMA where available and are only
// tolerance-comparable across ISAs.
struct Ops {
    const char* name;

    // row-major C[m x n] = A[m x k] * B[k x n]
    void (*gemm_f32)(const float* a, const float* b, float* c, int m, int k, int n);
    void (*gemm_f64)(const double* a, const double* b, double* c, int m, int k, int n);

    // unnormalized in-place Walsh-Hadamard butterflies, n a power of two
    void (*fht_f32)(float* x, int n);
    void (*fht_f64)(double* x, int n);

    void (*minmax_f32)(const float* x, int n, float* lo, float* hi);
    float (*absmax_f32)(const float* x, int n);

    // codes[i] = clip(nearbyint((x[i] - z) * inv_s), cmin, cmax)
    void (*encode_f32)(const float* x, int n, float inv_s, float z, int cmin, int cmax,
                       int16_t* codes);
    // out[i] = codes[i] * s + z
    void (*decode_f32)(const int16_t* codes, int n, float s, float z, float* out);

    // exact 32-bit integer accumulation, C[m x n] = A[m x k] * B[k x n]
    void (*gemm_i8_i32)(const int8_t* a, const int8_t* b, int32_t* c, int m, int k, int n);

    // plane rotation on two contiguous vectors: (x, y) <- (c*x - s*y, s*x + c*y)
    void (*rot_f64)(double* x, double* y, int n, double c, double s);
};

extern const Ops kScalarOps;
extern const Ops kAvx2Ops;  // falls back to scalar entries when built without AVX2

const Ops& ops();
bool avx2_available();

// Test hook. Passing nullptr restores CPUID-based selection.
void set_ops(const Ops* table);

}  // namespace resq::kern
