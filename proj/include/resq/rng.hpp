#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace resq {

// Deterministic RNG used everywhere seeds appear. Gaussian sampling is done
// by explicit Box-Muller on top of mt19937_64 rather than
// std::normal_distribution, whose output sequence is not pinned by the
// standard.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return mag * std::cos(2.0 * M_PI * u2);
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        // rejection-free modulo bias is irrelevant at our n << 2^64
        return eng_() % n;
    }

    // derive an independent child stream
    Rng fork(uint64_t salt) {
        return Rng(eng_() ^ (salt * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace resq
