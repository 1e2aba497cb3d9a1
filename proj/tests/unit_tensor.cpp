#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "mambaq/tensor.hpp"
#include "oracles.hpp"

using namespace mambaq;

namespace {
double u01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }
Tensor rnd(std::mt19937_64& g, std::vector<int64_t> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = (u01(g) * 2.0 - 1.0) * scale;
    return t;
}
}  // namespace

TEST_CASE("matmul matches the naive oracle") {
    std::mt19937_64 g(1);
    const std::vector<std::array<int64_t, 3>> dims = {{1, 1, 1}, {3, 5, 2}, {16, 64, 16}, {7, 33, 13}};
    for (auto [m, k, n] : dims) {
        Tensor a = rnd(g, {m, k}), b = rnd(g, {k, n});
        Tensor got = matmul(a, b);
        Tensor want = oracle::matmul(a, b);
        CHECK(max_abs_diff(got, want) <= 1e-12 * static_cast<double>(k));
    }
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimError);
}

TEST_CASE("transpose is an involution and matches indexing") {
    std::mt19937_64 g(2);
    Tensor a = rnd(g, {5, 9});
    Tensor t = transpose(a);
    REQUIRE(t.rows() == 9);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 9; ++j) CHECK(t.at(j, i) == a.at(i, j));
    CHECK(max_abs_diff(transpose(t), a) == 0.0);
}

TEST_CASE("rmsnorm matches the formula on 1-d and 2-d inputs") {
    std::mt19937_64 g(3);
    Tensor x = rnd(g, {6}), w = rnd(g, {6}, 2.0);
    const double eps = 1e-5;
    Tensor y = rmsnorm(x, w, eps);
    double ms = 0.0;
    for (double v : x.data) ms += v * v;
    ms /= 6.0;
    for (int64_t i = 0; i < 6; ++i)
        CHECK(y.data[size_t(i)] == doctest::Approx(x.data[size_t(i)] / std::sqrt(ms + eps) * w.data[size_t(i)]).epsilon(1e-12));

    Tensor x2 = rnd(g, {4, 6});
    Tensor y2 = rmsnorm(x2, w, eps);
    for (int64_t r = 0; r < 4; ++r) {
        Tensor row({6});
        for (int64_t c = 0; c < 6; ++c) row.data[size_t(c)] = x2.at(r, c);
        Tensor yr = rmsnorm(row, w, eps);
        for (int64_t c = 0; c < 6; ++c) CHECK(y2.at(r, c) == doctest::Approx(yr.data[size_t(c)]).epsilon(1e-12));
    }
}

TEST_CASE("silu and softplus special values") {
    CHECK(silu_scalar(0.0) == 0.0);
    CHECK(silu_scalar(30.0) == doctest::Approx(30.0).epsilon(1e-9));
    CHECK(softplus_scalar(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(softplus_scalar(40.0) == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(softplus_scalar(-40.0) == doctest::Approx(0.0).epsilon(1e-12));
    // softplus stays finite and monotone far into both tails
    CHECK(std::isfinite(softplus_scalar(700.0)));
    CHECK(softplus_scalar(-700.0) >= 0.0);
}

TEST_CASE("streamed conv1d matches the full-sequence oracle") {
    std::mt19937_64 g(4);
    const int64_t D = 5, K = 4, T = 12;
    Tensor kernel = rnd(g, {D, K}), bias = rnd(g, {D}, 0.3);
    Tensor xs = rnd(g, {D, T});
    Tensor want = oracle::conv_full(xs, kernel, bias);

    Tensor state = Tensor::zeros({D, K - 1});
    for (int64_t t = 0; t < T; ++t) {
        Tensor x({D});
        for (int64_t d = 0; d < D; ++d) x.data[size_t(d)] = xs.at(d, t);
        Tensor y = conv1d_step(state, x, kernel, bias);
        for (int64_t d = 0; d < D; ++d) CHECK(y.data[size_t(d)] == doctest::Approx(want.at(d, t)).epsilon(1e-12));
    }
}

TEST_CASE("conv1d k=1 needs no state and ignores history") {
    std::mt19937_64 g(5);
    Tensor kernel = rnd(g, {3, 1}), bias = rnd(g, {3});
    Tensor state = Tensor::zeros({3, 0});
    Tensor x = rnd(g, {3});
    Tensor y = conv1d_step(state, x, kernel, bias);
    for (int64_t d = 0; d < 3; ++d) {
        const double acc = bias.data[size_t(d)] + x.data[size_t(d)] * kernel.at(d, 0);
        CHECK(y.data[size_t(d)] == doctest::Approx(silu_scalar(acc)).epsilon(1e-15));
    }
}

TEST_CASE("elementwise ops check shapes") {
    Tensor a = Tensor::zeros({2, 2}), b = Tensor::zeros({4});
    CHECK_THROWS_AS(add(a, b), DimError);
    CHECK_THROWS_AS(mul(a, b), DimError);
    Tensor c = Tensor::full({2, 2}, 3.0);
    CHECK(max_abs_diff(add(c, c), Tensor::full({2, 2}, 6.0)) == 0.0);
    CHECK(max_abs_diff(mul(c, c), Tensor::full({2, 2}, 9.0)) == 0.0);
}

TEST_CASE("tensor constructors and accessors") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.dim(0) == 2);
    t.at(1, 2) = 7.0;
    CHECK(t.data[5] == 7.0);
    CHECK_THROWS_AS(Tensor({2, -1}), DimError);
    CHECK(shape_str({2, 3}) == "[2,3]");
    CHECK(Tensor::zeros({3}).all_finite());
    Tensor bad({1});
    bad.data[0] = std::nan("");
    CHECK_FALSE(bad.all_finite());
}
