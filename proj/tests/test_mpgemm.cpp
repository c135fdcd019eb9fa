#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "resq/linalg.hpp"
#include "resq/mpgemm.hpp"
#include "resq/rng.hpp"

using namespace resq;
using namespace resq::mpgemm;

namespace {

quant::QuantConfig act_sym{4, true, quant::Granularity::PerToken, 0};
quant::QuantConfig wt_sym{4, true, quant::Granularity::PerChannel, 0};

proj::ProjectionBasis resq_basis_for(const MatF& x, int r, uint64_t seed) {
    proj::CalibStats st(x.cols);
    st.accumulate(x);
    return proj::build_resq_basis(st, r, seed);
}

double rel_err(const MatF& got, const MatF& want) {
    return linalg::fro_norm(got - want) / std::max(linalg::fro_norm(want), 1e-12);
}

}  // namespace

TEST_CASE("op_count accounting") {
    auto all_low = op_count(4, 64, 64, 0, 4, 8);
    CHECK(all_low.macs_high == 0);
    CHECK(all_low.macs_low == 4 * 64 * 64);
    CHECK(all_low.high_share() == 0.0);

    // r = d/8 keeps exactly 1/8 of the channel MACs in high precision
    auto c = op_count(16, 512, 512, 64, 4, 8);
    CHECK(c.high_share() == doctest::Approx(0.125));

    // instrumented reference multiply as the counting oracle
    const int n = 1, d = 64, m = 48, r = 8;
    int64_t low = 0, high = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < d; ++k)
                (k < d - r ? low : high) += 1;
    auto g = op_count(n, d, m, r, 4, 8);
    CHECK(g.macs_low == low);
    CHECK(g.macs_high == high);
    CHECK(g.proj_macs_dense == static_cast<int64_t>(n) * d * d);
    CHECK(g.proj_ops_fht == static_cast<int64_t>(n) * d * 6);
}

TEST_CASE("16/16 bits reproduce the float product") {
    Rng rng(1);
    MatF x = gaussian_matrix<float>(24, 16, rng);
    MatF w = gaussian_matrix<float>(16, 20, rng);
    auto basis = resq_basis_for(x, 2, 5);
    MatF got = mixed_matmul(x, w, basis, 16, 16, act_sym, wt_sym);
    MatF want = matmul(x, w);
    CHECK(rel_err(got, want) < 1e-4);
}

TEST_CASE("identity weight and basis degenerate to mixed fake quant") {
    Rng rng(2);
    const int d = 16;
    MatF x = gaussian_matrix<float>(12, d, rng);
    MatF eye = MatF::identity(d);
    auto ident = proj::build_baseline_basis(proj::BasisKind::Identity, nullptr, d, 2, 0);

    // the identity quantizes exactly, so the product is the quantized activations
    MatF got = mixed_matmul(x, eye, ident, 4, 4, act_sym, wt_sym);
    MatF want = proj::mixed_fake_quant(x, ident, 4, 4, act_sym);
    CHECK(rel_err(got, want) < 1e-6);

    MatF fq_eye = quant::fake_quant(eye, wt_sym);
    CHECK(fq_eye.a == eye.a);
}

TEST_CASE("manual partial-product assembly matches bitwise") {
    Rng rng(3);
    const int d = 16, r = 2;
    MatF x = gaussian_matrix<float>(8, d, rng);
    MatF w = gaussian_matrix<float>(d, 12, rng);
    auto basis = resq_basis_for(x, r, 9);

    MatF got = mixed_matmul(x, w, basis, 4, 8, act_sym, wt_sym);

    // independent assembly from column slices; no cross-precision term exists
    MatF xp = proj::project(x, basis);
    MatF wp = matmul(basis.u.cast<float>().transposed(), w);
    auto qa_l = quant::quantize(xp.col_slice(0, d - r), act_sym);
    auto qa_h = quant::quantize(xp.col_slice(d - r, d), act_sym.with_bits(8));
    auto qw_l = quant::quantize(wp.row_slice(0, d - r), wt_sym);
    auto qw_h = quant::quantize(wp.row_slice(d - r, d), wt_sym.with_bits(8));
    MatD want = dequant_partial_product(qa_l, qw_l);
    MatD high = dequant_partial_product(qa_h, qw_h);
    for (size_t i = 0; i < want.size(); ++i) want.a[i] += high.a[i];

    CHECK(got.a == want.cast<float>().a);
}

TEST_CASE("integer path equals reference path") {
    Rng rng(4);
    for (auto agran : {quant::Granularity::PerTensor, quant::Granularity::PerToken}) {
        for (auto wgran : {quant::Granularity::PerTensor, quant::Granularity::PerChannel}) {
            MatF a = gaussian_matrix<float>(9, 33, rng);
            MatF b = gaussian_matrix<float>(33, 14, rng);
            auto qa = quant::quantize(a, quant::QuantConfig{4, true, agran, 0});
            auto qb = quant::quantize(b, quant::QuantConfig{8, true, wgran, 0});
            MatD ref = dequant_partial_product(qa, qb);
            MatD integer = integer_partial_product(qa, qb);
            // scale rounding differs between the routes only in the last ulps
            for (size_t i = 0; i < ref.size(); ++i)
                CHECK(integer.a[i] ==
                      doctest::Approx(ref.a[i]).epsilon(1e-12).scale(linalg::max_abs(ref)));
        }
    }
}

TEST_CASE("both mixed_matmul paths agree end to end") {
    Rng rng(9);
    const int d = 32;
    MatF x = gaussian_matrix<float>(16, d, rng);
    MatF w = gaussian_matrix<float>(d, 24, rng);
    auto basis = resq_basis_for(x, 4, 77);
    MatF ref = mixed_matmul(x, w, basis, 4, 8, act_sym, wt_sym, Path::Reference);
    MatF integer = mixed_matmul(x, w, basis, 4, 8, act_sym, wt_sym, Path::Integer);
    CHECK(rel_err(integer, ref) < 1e-4);
}

TEST_CASE("integer path rejects incompatible configs and overflow") {
    Rng rng(5);
    MatF a = gaussian_matrix<float>(4, 8, rng);
    MatF b = gaussian_matrix<float>(8, 4, rng);
    auto qa_asym = quant::quantize(a, quant::QuantConfig{4, false, quant::Granularity::PerToken, 0});
    auto qb = quant::quantize(b, wt_sym);
    CHECK_THROWS_AS(integer_partial_product(qa_asym, qb), Error);

    // contraction long enough to overflow the simulated 32-bit accumulator
    const int k = 135000;
    MatF wide(1, k), tall(k, 1);
    for (int i = 0; i < k; ++i) {
        wide(0, i) = 1.0f;
        tall(i, 0) = 1.0f;
    }
    auto qw = quant::quantize(wide, quant::QuantConfig{8, true, quant::Granularity::PerToken, 0});
    auto qt = quant::quantize(tall, quant::QuantConfig{8, true, quant::Granularity::PerChannel, 0});
    CHECK_THROWS_AS(integer_partial_product(qw, qt), Error);
}

TEST_CASE("resq basis lowers output error on outlier data") {
    Rng rng(6);
    const int d = 16, r = 2;
    MatF x = gaussian_matrix<float>(32, d, rng);
    for (int i = 0; i < x.rows; ++i) {
        x(i, 3) *= 20.0f;
        x(i, 11) *= 20.0f;
    }
    MatF w = gaussian_matrix<float>(d, d, rng);
    MatF want = matmul(x, w);

    auto resq = resq_basis_for(x, r, 31);
    auto ident = proj::build_baseline_basis(proj::BasisKind::Identity, nullptr, d, r, 0);

    double err_resq = rel_err(mixed_matmul(x, w, resq, 4, 8, act_sym, wt_sym), want);
    double err_ident = rel_err(mixed_matmul(x, w, ident, 4, 4, act_sym, wt_sym), want);
    CHECK(err_resq < err_ident);
}

TEST_CASE("output error non-increasing in rank") {
    Rng rng(7);
    const int d = 32;
    MatF x = gaussian_matrix<float>(64, d, rng);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < d; ++j) x(i, j) *= static_cast<float>(1.0 + j);
    MatF w = gaussian_matrix<float>(d, d, rng);
    MatF want = matmul(x, w);

    double prev = 1e30;
    for (int r : {2, 4, 8, 16}) {
        auto basis = resq_basis_for(x, r, 40);
        double err = rel_err(mixed_matmul(x, w, basis, 4, 8, act_sym, wt_sym), want);
        CHECK(err <= prev * (1.0 + 1e-6));
        prev = err;
    }
}

TEST_CASE("shape mismatches rejected") {
    Rng rng(8);
    MatF x = gaussian_matrix<float>(4, 8, rng);
    MatF w = gaussian_matrix<float>(9, 4, rng);
    auto basis = proj::build_baseline_basis(proj::BasisKind::Identity, nullptr, 8, 1, 0);
    CHECK_THROWS_AS(mixed_matmul(x, w, basis, 4, 8, act_sym, wt_sym), Error);
}
