#include <doctest.h>

#include <cmath>
#include <random>

#include "mambaq/hadamard.hpp"
#include "oracles.hpp"

using namespace mambaq;

namespace {
double u01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }
// H H^T == m I, exact over the +-1 integer entries
bool hadamard_exact(const Tensor& h) {
    const int64_t m = h.rows();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < m; ++k) acc += h.at(i, k) * h.at(j, k);
            if (acc != (i == j ? static_cast<double>(m) : 0.0)) return false;
        }
    return true;
}
}  // namespace

TEST_CASE("sylvester matches the popcount closed form") {
    for (int k = 0; k <= 6; ++k) {
        Tensor h = sylvester(k);
        Tensor want = oracle::sylvester_dense(int64_t{1} << k);
        CHECK(max_abs_diff(h, want) == 0.0);
    }
    CHECK_THROWS_AS(sylvester(kMaxSylvesterK + 1), CapacityError);
}

TEST_CASE("nonpot hadamard orders are exact") {
    for (int64_t m : {12, 20, 24, 40, 48, 80}) {
        Tensor h = hadamard_nonpot(m);
        REQUIRE(h.rows() == m);
        for (double v : h.data) CHECK(std::abs(v) == 1.0);
        CHECK(hadamard_exact(h));
    }
    CHECK_THROWS_AS(hadamard_nonpot(28), UnsupportedError);  // no Paley-1 base here
}

TEST_CASE("fwht equals the dense sylvester transform") {
    std::mt19937_64 g(7);
    for (int k = 1; k <= 8; ++k) {
        const int64_t n = int64_t{1} << k;
        Tensor h = oracle::sylvester_dense(n);
        std::vector<double> v(static_cast<size_t>(n));
        for (auto& x : v) x = u01(g) * 2.0 - 1.0;
        Tensor row({1, n}, std::vector<double>(v.begin(), v.end()));
        Tensor want = oracle::matmul(row, h);
        fwht(v);
        for (int64_t i = 0; i < n; ++i) CHECK(v[size_t(i)] == doctest::Approx(want.at(0, i)).epsilon(1e-12));
    }
    std::vector<double> bad(3);
    CHECK_THROWS_AS(fwht(bad), DimError);
}

TEST_CASE("make_plan picks supported factorizations") {
    HadamardPlan p64 = make_plan(64);
    CHECK(p64.pure_pot());
    CHECK(p64.pot_size == 64);

    HadamardPlan p5120 = make_plan(5120);
    CHECK(p5120.pot_size == 128);
    CHECK(p5120.small_size == 40);

    HadamardPlan p640 = make_plan(640);
    CHECK(p640.pot_size * p640.small_size == 640);
    CHECK(p640.pot_size <= 128);

    // odd parts other than 1 and 5 are rejected, including ones where a
    // hadamard order exists but the kernel has no datapath for it
    CHECK_THROWS_AS(make_plan(96), UnsupportedError);
    CHECK_THROWS_AS(make_plan(768), UnsupportedError);
    CHECK_THROWS_AS(make_plan(7), UnsupportedError);
}

TEST_CASE("apply_rotation matches the dense plan matrix") {
    std::mt19937_64 g(8);
    for (int64_t n : {8, 40, 64, 160}) {
        HadamardPlan plan = make_plan(n);
        Tensor dense = plan_matrix(plan);
        Tensor x({3, n});
        for (auto& v : x.data) v = u01(g) * 2.0 - 1.0;
        Tensor got = apply_rotation(x, plan);
        Tensor want = oracle::matmul(x, dense);
        CHECK(max_abs_diff(got, want) <= 1e-11);
        // orthonormal: transpose undoes it and the norm is preserved
        Tensor back = apply_rotation(got, plan, /*transpose=*/true);
        CHECK(max_abs_diff(back, x) <= 1e-11);
        CHECK(l2_norm(got) == doctest::Approx(l2_norm(x)).epsilon(1e-12));
    }
}

TEST_CASE("plan matrix is orthonormal") {
    for (int64_t n : {16, 40, 80}) {
        Tensor q = plan_matrix(make_plan(n));
        Tensor qqT = oracle::matmul(q, transpose(q));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j)
                CHECK(qqT.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("double_order doubles while staying hadamard") {
    Tensor h12 = hadamard_nonpot(12);
    Tensor h24 = hadamard_nonpot(24);
    REQUIRE(h24.rows() == 24);
    CHECK(hadamard_exact(h24));
    // kron structure: top-left block of the doubling equals the base
    for (int64_t i = 0; i < 12; ++i)
        for (int64_t j = 0; j < 12; ++j) CHECK(h24.at(i, j) == h12.at(i, j));
}
