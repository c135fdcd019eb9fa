#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "resq/linalg.hpp"
#include "resq/rng.hpp"

using namespace resq;
using namespace resq::linalg;

namespace {

MatD random_symmetric(int n, uint64_t seed) {
    Rng rng(seed);
    MatD a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.gaussian();
    return a;
}

double reconstruction_error(const MatD& a, const EighResult& e) {
    const int n = a.rows;
    MatD lam(n, n);
    for (int i = 0; i < n; ++i) lam(i, i) = e.eigenvalues[i];
    MatD rec = matmul(matmul(e.eigenvectors, lam), e.eigenvectors.transposed());
    return fro_norm(rec - a) / std::max(fro_norm(a), 1e-300);
}

}  // namespace

TEST_CASE("eigh on diagonal matrix") {
    MatD a(2, 2);
    a(0, 0) = 2.0;
    a(1, 1) = 1.0;
    auto e = eigh_symmetric(a);
    CHECK(e.eigenvalues[0] == doctest::Approx(1.0));
    CHECK(e.eigenvalues[1] == doctest::Approx(2.0));
    // eigenvalue 1 pairs with e2, eigenvalue 2 with e1 (up to sign)
    CHECK(std::fabs(e.eigenvectors(1, 0)) == doctest::Approx(1.0));
    CHECK(std::fabs(e.eigenvectors(0, 1)) == doctest::Approx(1.0));
}

TEST_CASE("eigh on exchange matrix") {
    MatD a(2, 2);
    a(0, 1) = a(1, 0) = 1.0;
    auto e = eigh_symmetric(a);
    CHECK(e.eigenvalues[0] == doctest::Approx(-1.0));
    CHECK(e.eigenvalues[1] == doctest::Approx(1.0));
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    // (1,-1)/sqrt(2) and (1,1)/sqrt(2), up to sign
    CHECK(std::fabs(e.eigenvectors(0, 0) * e.eigenvectors(1, 0)) ==
          doctest::Approx(inv_sqrt2 * inv_sqrt2));
    CHECK(e.eigenvectors(0, 0) * e.eigenvectors(1, 0) < 0);
    CHECK(e.eigenvectors(0, 1) * e.eigenvectors(1, 1) > 0);
}

TEST_CASE("eigh reconstruction and invariants on random symmetric input") {
    for (int n : {3, 8, 33}) {
        MatD a = random_symmetric(n, 42 + n);
        auto e = eigh_symmetric(a);
        CHECK(reconstruction_error(a, e) < 1e-10);
        CHECK(orthogonality_error(e.eigenvectors) < 1e-6);
        for (int i = 1; i < n; ++i) CHECK(e.eigenvalues[i] >= e.eigenvalues[i - 1]);
        double trace = 0.0, sum = 0.0;
        for (int i = 0; i < n; ++i) {
            trace += a(i, i);
            sum += e.eigenvalues[i];
        }
        CHECK(sum == doctest::Approx(trace).epsilon(1e-8));
    }
}

TEST_CASE("jacobi and tridiagonal QL agree") {
    MatD a = random_symmetric(64, 7);
    auto ej = eigh_jacobi(a);
    auto eq = eigh_tridiag_ql(a);
    const double scale = fro_norm(a);
    for (int i = 0; i < 64; ++i)
        CHECK(std::fabs(ej.eigenvalues[i] - eq.eigenvalues[i]) < 1e-10 * scale);
    CHECK(reconstruction_error(a, ej) < 1e-12);
    CHECK(reconstruction_error(a, eq) < 1e-12);
}

TEST_CASE("eigh residual per eigenpair") {
    MatD a = random_symmetric(48, 3);
    auto e = eigh_symmetric(a);
    const double tol = 1e-6 * fro_norm(a);
    for (int j = 0; j < a.rows; ++j) {
        double worst = 0.0;
        for (int i = 0; i < a.rows; ++i) {
            double av = 0.0;
            for (int k = 0; k < a.rows; ++k) av += a(i, k) * e.eigenvectors(k, j);
            worst = std::max(worst, std::fabs(av - e.eigenvalues[j] * e.eigenvectors(i, j)));
        }
        CHECK(worst < tol);
    }
}

TEST_CASE("eigh rejects non-symmetric input") {
    MatD a(3, 3);
    a(0, 1) = 1.0;
    a(1, 0) = 2.0;
    CHECK_THROWS_AS(eigh_symmetric(a), Error);
}

TEST_CASE("random_orthogonal basics") {
    MatD one = random_orthogonal(1, 5);
    CHECK(std::fabs(std::fabs(one(0, 0)) - 1.0) < 1e-15);

    MatD a = random_orthogonal(64, 1234);
    MatD b = random_orthogonal(64, 1234);
    CHECK(a.a == b.a);  // identical seed, identical bits
    MatD c = random_orthogonal(64, 1235);
    CHECK(a.a != c.a);

    MatD q = random_orthogonal(32, 9);
    for (int j = 0; j < 32; ++j) {
        double norm = 0.0;
        for (int i = 0; i < 32; ++i) norm += q(i, j) * q(i, j);
        CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-10);
    }
    CHECK(orthogonality_error(q) < 1e-10);
    CHECK_THROWS_AS(random_orthogonal(0, 1), Error);
}

TEST_CASE("hadamard construction") {
    MatD h1 = hadamard(1);
    CHECK(h1(0, 0) == doctest::Approx(1.0));

    MatD h2 = hadamard(2);
    const double v = 1.0 / std::sqrt(2.0);
    CHECK(h2(0, 0) == doctest::Approx(v));
    CHECK(h2(0, 1) == doctest::Approx(v));
    CHECK(h2(1, 0) == doctest::Approx(v));
    CHECK(h2(1, 1) == doctest::Approx(-v));

    // Sylvester doubling of dim=2; exact on the +-1 integers pre-normalization
    MatD h4 = hadamard(4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double sign = (i >= 2 && j >= 2) ? -1.0 : 1.0;
            CHECK(h4(i, j) == doctest::Approx(h2(i % 2, j % 2) * sign * v));
            CHECK(std::fabs(h4(i, j) * std::sqrt(4.0)) == doctest::Approx(1.0));
        }

    for (int dim : {4, 8, 12, 20, 24, 40, 64, 256}) {
        CHECK(hadamard_supported(dim));
        CHECK(orthogonality_error(hadamard(dim)) < 1e-12);
    }
    for (int dim : {3, 6, 10, 28, 36}) {
        CHECK_FALSE(hadamard_supported(dim));
        CHECK_THROWS_AS(hadamard(dim), Error);
    }
}

TEST_CASE("fast hadamard transform") {
    MatF e1(1, 4);
    e1(0, 0) = 1.0f;
    fast_hadamard_transform(e1);
    for (int j = 0; j < 4; ++j) CHECK(e1(0, j) == doctest::Approx(0.5));

    MatF zero(3, 8);
    fast_hadamard_transform(zero);
    for (float x : zero.a) CHECK(x == 0.0f);

    // dense-multiply oracle
    Rng rng(77);
    MatF x = gaussian_matrix<float>(1, 16, rng);
    MatF xt = x;
    fast_hadamard_transform(xt);
    MatF dense = matmul(x, hadamard(16).cast<float>());
    for (int j = 0; j < 16; ++j) CHECK(xt(0, j) == doctest::Approx(dense(0, j)).epsilon(1e-6));

    // involution: H is symmetric orthogonal for the Sylvester construction
    MatF y = gaussian_matrix<float>(4, 64, rng);
    MatF yt = y;
    fast_hadamard_transform(yt);
    fast_hadamard_transform(yt);
    for (size_t i = 0; i < y.size(); ++i)
        CHECK(yt.a[i] == doctest::Approx(y.a[i]).epsilon(1e-5));

    // column-axis variant
    MatF z = gaussian_matrix<float>(8, 3, rng);
    MatF zt = z;
    fast_hadamard_transform(zt, 0);
    MatF dense_cols = matmul(hadamard(8).cast<float>(), z);
    for (size_t i = 0; i < z.size(); ++i)
        CHECK(zt.a[i] == doctest::Approx(dense_cols.a[i]).epsilon(1e-5));

    CHECK(fast_hadamard_transform(y) == 64 * 6);

    MatF bad(2, 12);
    CHECK_THROWS_AS(fast_hadamard_transform(bad), Error);
}

TEST_CASE("norms") {
    MatF a(1, 2);
    a(0, 0) = 3.0f;
    a(0, 1) = 4.0f;
    CHECK(fro_norm(a) == doctest::Approx(5.0));

    CHECK(fro_norm(MatD::identity(4)) == doctest::Approx(2.0));

    Rng rng(5);
    MatD r = gaussian_matrix<double>(13, 7, rng);
    // compensated-summation oracle
    double sum = 0.0, comp = 0.0;
    for (double v : r.a) {
        double y = v * v - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    CHECK(fro_norm(r) == doctest::Approx(std::sqrt(sum)).epsilon(1e-14));

    double mx = 0.0;
    for (double v : r.a) mx = std::max(mx, std::fabs(v));
    CHECK(max_abs(r) == doctest::Approx(mx));

    MatF zero(3, 3);
    CHECK(fro_norm(zero) == 0.0);
}
