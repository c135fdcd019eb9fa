#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace resq {

// Thrown on contract violations (bad shapes, non-finite input, unsupported
// configurations). The CLI maps these onto its exit-code table.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

// Thread cap, settable via RESQ_THREADS. Defaults to the hardware count.
inline int max_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("RESQ_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc ? static_cast<int>(hc) : 1;
    }();
    return n;
}

// Static partition of [0, n) over worker threads. Each index must be written
// by exactly one worker so results are independent of the thread count.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    const int nt = static_cast<int>(std::min<int64_t>(max_threads(), n));
    if (nt <= 1 || n < 256) {
        body(0, n);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(nt);
    const int64_t chunk = (n + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
        int64_t b = t * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        workers.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace resq
