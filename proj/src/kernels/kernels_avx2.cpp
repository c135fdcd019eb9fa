// AVX2 kernel variants. Compiled with -mavx2 -mfma; only reached when CPUID
// reports support. Arithmetic order per element matches the scalar reference
// exactly for the bitwise-contract kernels (no FMA contraction there).
//
// The float GEMM remainder columns use std::fma so an output element is
// rounded the same way whether it falls in a vector lane or the tail; the
// attention path depends on this for prefix-stable logits.

#include <algorithm>
#include <cmath>
#include <cstring>

#include "resq/kernels.hpp"

#ifndef RESQ_NO_AVX2
#include <immintrin.h>

namespace resq::kern {
namespace {

void gemm_f32_avx2(const float* a, const float* b, float* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(float) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float aip = ai[p];
            if (aip == 0.0f) continue;
            const __m256 va = _mm256_set1_ps(aip);
            const float* bp = b + static_cast<size_t>(p) * n;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 vc = _mm256_loadu_ps(ci + j);
                vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(bp + j), vc);
                _mm256_storeu_ps(ci + j, vc);
            }
            for (; j < n; ++j) ci[j] = std::fmaf(aip, bp[j], ci[j]);
        }
    }
}

void gemm_f64_avx2(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            if (aip == 0.0) continue;
            const __m256d va = _mm256_set1_pd(aip);
            const double* bp = b + static_cast<size_t>(p) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(ci + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + j), vc);
                _mm256_storeu_pd(ci + j, vc);
            }
            for (; j < n; ++j) ci[j] = std::fma(aip, bp[j], ci[j]);
        }
    }
}

// Strides below the vector width run scalar; the bulk of the work is in the
// wide stages anyway and the per-element operations stay identical.
void fht_f32_avx2(float* x, int n) {
    int h = 1;
    for (; h < n && h < 8; h <<= 1) {
        for (int i = 0; i < n; i += h << 1) {
            for (int j = i; j < i + h; ++j) {
                float u = x[j], v = x[j + h];
                x[j] = u + v;
                x[j + h] = u - v;
            }
        }
    }
    for (; h < n; h <<= 1) {
        for (int i = 0; i < n; i += h << 1) {
            for (int j = i; j < i + h; j += 8) {
                __m256 u = _mm256_loadu_ps(x + j);
                __m256 v = _mm256_loadu_ps(x + j + h);
                _mm256_storeu_ps(x + j, _mm256_add_ps(u, v));
                _mm256_storeu_ps(x + j + h, _mm256_sub_ps(u, v));
            }
        }
    }
}

void fht_f64_avx2(double* x, int n) {
    int h = 1;
    for (; h < n && h < 4; h <<= 1) {
        for (int i = 0; i < n; i += h << 1) {
            for (int j = i; j < i + h; ++j) {
                double u = x[j], v = x[j + h];
                x[j] = u + v;
                x[j + h] = u - v;
            }
        }
    }
    for (; h < n; h <<= 1) {
        for (int i = 0; i < n; i += h << 1) {
            for (int j = i; j < i + h; j += 4) {
                __m256d u = _mm256_loadu_pd(x + j);
                __m256d v = _mm256_loadu_pd(x + j + h);
                _mm256_storeu_pd(x + j, _mm256_add_pd(u, v));
                _mm256_storeu_pd(x + j + h, _mm256_sub_pd(u, v));
            }
        }
    }
}

void minmax_f32_avx2(const float* x, int n, float* lo, float* hi) {
    if (n < 8) {
        float mn = x[0], mx = x[0];
        for (int i = 1; i < n; ++i) {
            mn = std::min(mn, x[i]);
            mx = std::max(mx, x[i]);
        }
        *lo = mn;
        *hi = mx;
        return;
    }
    __m256 vmn = _mm256_loadu_ps(x);
    __m256 vmx = vmn;
    int i = 8;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        vmn = _mm256_min_ps(vmn, v);
        vmx = _mm256_max_ps(vmx, v);
    }
    alignas(32) float bmn[8], bmx[8];
    _mm256_store_ps(bmn, vmn);
    _mm256_store_ps(bmx, vmx);
    float mn = bmn[0], mx = bmx[0];
    for (int t = 1; t < 8; ++t) {
        mn = std::min(mn, bmn[t]);
        mx = std::max(mx, bmx[t]);
    }
    for (; i < n; ++i) {
        mn = std::min(mn, x[i]);
        mx = std::max(mx, x[i]);
    }
    *lo = mn;
    *hi = mx;
}

float absmax_f32_avx2(const float* x, int n) {
    const __m256 sign_mask = _mm256_set1_ps(-0.0f);
    __m256 vm = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_andnot_ps(sign_mask, _mm256_loadu_ps(x + i));
        vm = _mm256_max_ps(vm, v);
    }
    alignas(32) float buf[8];
    _mm256_store_ps(buf, vm);
    float m = 0.0f;
    for (int t = 0; t < 8; ++t) m = std::max(m, buf[t]);
    for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
    return m;
}

void encode_f32_avx2(const float* x, int n, float inv_s, float z, int cmin, int cmax,
                     int16_t* codes) {
    const __m256 vz = _mm256_set1_ps(z);
    const __m256 vs = _mm256_set1_ps(inv_s);
    const __m256i vlo = _mm256_set1_epi32(cmin);
    const __m256i vhi = _mm256_set1_epi32(cmax);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 t = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(x + i), vz), vs);
        t = _mm256_round_ps(t, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
        __m256i c = _mm256_cvtps_epi32(t);
        c = _mm256_max_epi32(vlo, _mm256_min_epi32(vhi, c));
        // narrow 8 x i32 -> 8 x i16
        __m128i lo128 = _mm256_castsi256_si128(c);
        __m128i hi128 = _mm256_extracti128_si256(c, 1);
        _mm_storeu_si128(reinterpret_cast<__m128i*>(codes + i), _mm_packs_epi32(lo128, hi128));
    }
    for (; i < n; ++i) {
        float t = (x[i] - z) * inv_s;
        int c = static_cast<int>(std::nearbyintf(t));
        codes[i] = static_cast<int16_t>(std::clamp(c, cmin, cmax));
    }
}

void decode_f32_avx2(const int16_t* codes, int n, float s, float z, float* out) {
    const __m256 vs = _mm256_set1_ps(s);
    const __m256 vz = _mm256_set1_ps(z);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m128i c16 = _mm_loadu_si128(reinterpret_cast<const __m128i*>(codes + i));
        __m256 v = _mm256_cvtepi32_ps(_mm256_cvtepi16_epi32(c16));
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_mul_ps(v, vs), vz));
    }
    for (; i < n; ++i) out[i] = static_cast<float>(codes[i]) * s + z;
}

void gemm_i8_i32_avx2(const int8_t* a, const int8_t* b, int32_t* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(int32_t) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const int8_t* ai = a + static_cast<size_t>(i) * k;
        int32_t* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const int32_t aip = ai[p];
            if (aip == 0) continue;
            const int8_t* bp = b + static_cast<size_t>(p) * n;
            const __m256i va = _mm256_set1_epi16(static_cast<int16_t>(aip));
            int j = 0;
            for (; j + 16 <= n; j += 16) {
                __m128i b8 = _mm_loadu_si128(reinterpret_cast<const __m128i*>(bp + j));
                __m256i b16 = _mm256_cvtepi8_epi16(b8);
                __m256i prod = _mm256_mullo_epi16(va, b16);  // |a*b| <= 127*127, no overflow
                __m256i lo = _mm256_cvtepi16_epi32(_mm256_castsi256_si128(prod));
                __m256i hi = _mm256_cvtepi16_epi32(_mm256_extracti128_si256(prod, 1));
                __m256i c0 = _mm256_loadu_si256(reinterpret_cast<__m256i*>(ci + j));
                __m256i c1 = _mm256_loadu_si256(reinterpret_cast<__m256i*>(ci + j + 8));
                _mm256_storeu_si256(reinterpret_cast<__m256i*>(ci + j), _mm256_add_epi32(c0, lo));
                _mm256_storeu_si256(reinterpret_cast<__m256i*>(ci + j + 8),
                                    _mm256_add_epi32(c1, hi));
            }
            for (; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void rot_f64_avx2(double* x, double* y, int n, double c, double s) {
    const __m256d vc = _mm256_set1_pd(c);
    const __m256d vs = _mm256_set1_pd(s);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xi = _mm256_loadu_pd(x + i);
        __m256d yi = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(x + i, _mm256_sub_pd(_mm256_mul_pd(vc, xi), _mm256_mul_pd(vs, yi)));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(vs, xi), _mm256_mul_pd(vc, yi)));
    }
    for (; i < n; ++i) {
        double xi = x[i], yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

}  // namespace

const Ops kAvx2Ops = {
    "avx2",          gemm_f32_avx2, gemm_f64_avx2, fht_f32_avx2,  fht_f64_avx2, minmax_f32_avx2,
    absmax_f32_avx2, encode_f32_avx2, decode_f32_avx2, gemm_i8_i32_avx2, rot_f64_avx2,
};

}  // namespace resq::kern

#else  // RESQ_NO_AVX2

namespace resq::kern {
// Null table; the dispatcher treats it as unavailable.
const Ops kAvx2Ops = {};
}

#endif
