#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "resq/gptq.hpp"
#include "resq/linalg.hpp"
#include "resq/rng.hpp"

using namespace resq;
using namespace resq::gptq;

namespace {

quant::QuantConfig wcfg{4, true, quant::Granularity::PerChannel, 0};

HessianEstimate hessian_from_data(const MatF& x) {
    proj::CalibStats st(x.cols);
    st.accumulate(x);
    return HessianEstimate::from_stats(st);
}

}  // namespace

TEST_CASE("identity Hessian reproduces plain rounding bitwise") {
    Rng rng(1);
    MatF w = gaussian_matrix<float>(16, 12, rng);
    auto q_gptq = gptq_quantize(w, HessianEstimate::identity(16), wcfg);
    auto q_rtn = quant::quantize(w, wcfg);
    CHECK(q_gptq.codes == q_rtn.codes);
    CHECK(q_gptq.scales == q_rtn.scales);
}

TEST_CASE("two-row column against exhaustive oracle") {
    // correlated two-channel Hessian, 2-bit grid: brute force all code pairs
    MatF w(2, 1);
    w(0, 0) = 0.37f;
    w(1, 0) = -0.61f;
    HessianEstimate h = HessianEstimate::identity(2);
    h.h(0, 0) = h.h(1, 1) = 1.0;
    h.h(0, 1) = h.h(1, 0) = 0.9;

    auto q = gptq_quantize(w, h, quant::QuantConfig{2, true, quant::Granularity::PerChannel, 0});
    MatF wq = quant::dequantize(q);
    double got = hessian_weighted_error(w, wq, h.h);

    // scales are per column over the original weights
    const float s = q.scales[0];
    double best = 1e30;
    for (int c0 = -1; c0 <= 1; ++c0)
        for (int c1 = -1; c1 <= 1; ++c1) {
            MatF cand(2, 1);
            cand(0, 0) = static_cast<float>(c0) * s;
            cand(1, 0) = static_cast<float>(c1) * s;
            best = std::min(best, hessian_weighted_error(w, cand, h.h));
        }
    CHECK(got <= best * 1.05 + 1e-12);
}

TEST_CASE("beats round-to-nearest under a data Hessian") {
    Rng rng(2);
    MatF x = gaussian_matrix<float>(256, 16, rng);
    // correlate the input channels so error propagation has something to exploit
    for (int i = 0; i < x.rows; ++i)
        for (int j = 1; j < x.cols; ++j) x(i, j) += 0.7f * x(i, j - 1);
    HessianEstimate h = hessian_from_data(x);

    MatF w = gaussian_matrix<float>(16, 16, rng);
    auto q = gptq_quantize(w, h, wcfg);
    double err_gptq = hessian_weighted_error(w, quant::dequantize(q), h.h);
    double err_rtn = hessian_weighted_error(w, quant::fake_quant(w, wcfg), h.h);
    CHECK(err_gptq < err_rtn);
}

TEST_CASE("dominant damping converges to round-to-nearest") {
    Rng rng(3);
    MatF x = gaussian_matrix<float>(64, 12, rng);
    HessianEstimate h = hessian_from_data(x);
    h.damping = 1e12;
    MatF w = gaussian_matrix<float>(12, 8, rng);
    auto q = gptq_quantize(w, h, wcfg);
    auto rtn = quant::quantize(w, wcfg);
    CHECK(q.codes == rtn.codes);
}

TEST_CASE("deterministic and block-size robust") {
    Rng rng(4);
    MatF x = gaussian_matrix<float>(128, 24, rng);
    HessianEstimate h = hessian_from_data(x);
    MatF w = gaussian_matrix<float>(24, 16, rng);

    auto a = gptq_quantize(w, h, wcfg, 8);
    auto b = gptq_quantize(w, h, wcfg, 8);
    CHECK(a.codes == b.codes);

    // blocked and unblocked runs perform the same sequential updates
    auto full = gptq_quantize(w, h, wcfg, 24);
    auto tiny = gptq_quantize(w, h, wcfg, 1);
    auto ragged = gptq_quantize(w, h, wcfg, 7);  // 24 = 3*7 + 3, last block partial
    double ef = hessian_weighted_error(w, quant::dequantize(full), h.h);
    double e1 = hessian_weighted_error(w, quant::dequantize(tiny), h.h);
    double e7 = hessian_weighted_error(w, quant::dequantize(ragged), h.h);
    CHECK(e1 == doctest::Approx(ef).epsilon(1e-6));
    CHECK(e7 == doctest::Approx(ef).epsilon(1e-6));
}

TEST_CASE("diagonal Hessian with unit blocks equals rtn error") {
    Rng rng(5);
    MatF w = gaussian_matrix<float>(10, 6, rng);
    HessianEstimate h = HessianEstimate::identity(10);
    for (int i = 0; i < 10; ++i) h.h(i, i) = 0.5 + i;
    auto q = gptq_quantize(w, h, wcfg, 1);
    double err_gptq = hessian_weighted_error(w, quant::dequantize(q), h.h);
    double err_rtn = hessian_weighted_error(w, quant::fake_quant(w, wcfg), h.h);
    CHECK(std::fabs(err_gptq - err_rtn) <= 1e-9 * std::max(1.0, err_rtn));
}

TEST_CASE("dead input channels are tolerated") {
    Rng rng(6);
    MatF x = gaussian_matrix<float>(64, 8, rng);
    for (int i = 0; i < x.rows; ++i) x(i, 3) = 0.0f;  // channel 3 never fires
    HessianEstimate h = hessian_from_data(x);
    MatF w = gaussian_matrix<float>(8, 8, rng);
    auto q = gptq_quantize(w, h, wcfg);
    MatF wq = quant::dequantize(q);
    for (int j = 0; j < 8; ++j) CHECK(wq(3, j) == 0.0f);  // dead row pinned to zero
}

TEST_CASE("rejects bad inputs") {
    Rng rng(7);
    MatF w = gaussian_matrix<float>(8, 8, rng);

    HessianEstimate npd = HessianEstimate::identity(8);
    for (int i = 0; i < 8; ++i) npd.h(i, i) = -4.0;
    npd.damping = 0.01;
    CHECK_THROWS_AS(gptq_quantize(w, npd, wcfg), Error);

    HessianEstimate wrong = HessianEstimate::identity(9);
    CHECK_THROWS_AS(gptq_quantize(w, wrong, wcfg), Error);

    quant::QuantConfig asym{4, false, quant::Granularity::PerChannel, 0};
    CHECK_THROWS_AS(gptq_quantize(w, HessianEstimate::identity(8), asym), Error);
}

TEST_CASE("mixed row split") {
    Rng rng(8);
    MatF x = gaussian_matrix<float>(256, 24, rng);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 1; j < x.cols; ++j) x(i, j) += 0.6f * x(i, j - 1);
    HessianEstimate h = hessian_from_data(x);
    MatF w = gaussian_matrix<float>(24, 16, rng);

    auto gm = gptq_quantize_mixed(w, h, 4, 8, 20);
    auto rm = rtn_quantize_mixed(w, 4, 8, 20);
    CHECK(gm.low.rows == 20);
    CHECK(gm.high.rows == 4);
    CHECK(gm.high.config.bits == 8);
    CHECK(gm.dequantized().rows == 24);

    double eg = hessian_weighted_error(w, gm.dequantized(), h.h);
    double er = hessian_weighted_error(w, rm.dequantized(), h.h);
    CHECK(eg < er);

    // uniform split at the full height leaves a single low group
    auto uniform = gptq_quantize_mixed(w, h, 4, 8, 24);
    CHECK(uniform.high.rows == 0);
    CHECK(uniform.dequantized().rows == 24);
}

TEST_CASE("hessian conjugation") {
    Rng rng(9);
    MatF x = gaussian_matrix<float>(64, 8, rng);
    HessianEstimate h = hessian_from_data(x);
    MatD u = linalg::random_orthogonal(8, 4);
    HessianEstimate hp = h.conjugated(u);
    // tr(H') = tr(H) under an orthogonal change of basis
    double t1 = 0, t2 = 0;
    for (int i = 0; i < 8; ++i) {
        t1 += h.h(i, i);
        t2 += hp.h(i, i);
    }
    CHECK(t1 == doctest::Approx(t2).epsilon(1e-10));
}
