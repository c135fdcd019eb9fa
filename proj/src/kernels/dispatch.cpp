#include "resq/kernels.hpp"

namespace resq::kern {

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
    return kAvx2Ops.gemm_f32 != nullptr && __builtin_cpu_supports("avx2") &&
           __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {
const Ops* g_override = nullptr;

const Ops* detect() {
    return avx2_available() ? &kAvx2Ops : &kScalarOps;
}
}  // namespace

const Ops& ops() {
    if (g_override) return *g_override;
    static const Ops* best = detect();
    return *best;
}

void set_ops(const Ops* table) { g_override = table; }

}  // namespace resq::kern
