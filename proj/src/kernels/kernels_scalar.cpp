#include <algorithm>
#include <cmath>
#include <cstring>

#include "resq/kernels.hpp"

// Scalar reference kernels. These define the semantics; the SIMD variants
// must reproduce them (bitwise for everything except the float GEMMs).

namespace resq::kern {
namespace {

void gemm_f32_scalar(const float* a, const float* b, float* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(float) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float aip = ai[p];
            if (aip == 0.0f) continue;
            const float* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_f64_scalar(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            if (aip == 0.0) continue;
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

template <class T>
void fht_scalar(T* x, int n) {
    for (int h = 1; h < n; h <<= 1) {
        for (int i = 0; i < n; i += h << 1) {
            for (int j = i; j < i + h; ++j) {
                T u = x[j];
                T v = x[j + h];
                x[j] = u + v;
                x[j + h] = u - v;
            }
        }
    }
}

void fht_f32_scalar(float* x, int n) { fht_scalar(x, n); }
void fht_f64_scalar(double* x, int n) { fht_scalar(x, n); }

void minmax_f32_scalar(const float* x, int n, float* lo, float* hi) {
    float mn = x[0], mx = x[0];
    for (int i = 1; i < n; ++i) {
        mn = std::min(mn, x[i]);
        mx = std::max(mx, x[i]);
    }
    *lo = mn;
    *hi = mx;
}

float absmax_f32_scalar(const float* x, int n) {
    float m = 0.0f;
    for (int i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
    return m;
}

void encode_f32_scalar(const float* x, int n, float inv_s, float z, int cmin, int cmax,
                       int16_t* codes) {
    // nearbyintf under the default rounding mode is round-half-to-even
    for (int i = 0; i < n; ++i) {
        float t = (x[i] - z) * inv_s;
        int c = static_cast<int>(std::nearbyintf(t));
        c = std::clamp(c, cmin, cmax);
        codes[i] = static_cast<int16_t>(c);
    }
}

void decode_f32_scalar(const int16_t* codes, int n, float s, float z, float* out) {
    for (int i = 0; i < n; ++i) out[i] = static_cast<float>(codes[i]) * s + z;
}

void gemm_i8_i32_scalar(const int8_t* a, const int8_t* b, int32_t* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(int32_t) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const int8_t* ai = a + static_cast<size_t>(i) * k;
        int32_t* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const int32_t aip = ai[p];
            if (aip == 0) continue;
            const int8_t* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void rot_f64_scalar(double* x, double* y, int n, double c, double s) {
    for (int i = 0; i < n; ++i) {
        double xi = x[i], yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

}  // namespace

const Ops kScalarOps = {
    "scalar",         gemm_f32_scalar, gemm_f64_scalar, fht_f32_scalar,
    fht_f64_scalar,   minmax_f32_scalar, absmax_f32_scalar, encode_f32_scalar,
    decode_f32_scalar, gemm_i8_i32_scalar, rot_f64_scalar,
};

}  // namespace resq::kern
