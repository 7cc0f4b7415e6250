#include "doctest.h"

#include "support.hpp"

#include "memdfa/tensor.hpp"

using namespace memdfa;

namespace {
template <typename T>
Tensor<T> t2(Shape s, std::vector<T> v) {
    return Tensor<T>(std::move(s), std::move(v), "t");
}
}  // namespace

TEST_CASE("matmul identity and small fixed products") {
    auto eye = t2<double>({2, 2}, {1, 0, 0, 1});
    auto col = t2<double>({2, 1}, {2, 3});
    auto r = matmul(eye, col);
    CHECK(r(0, 0) == 2);
    CHECK(r(1, 0) == 3);

    auto a = t2<double>({2, 2}, {1, 2, 3, 4});
    auto ones = t2<double>({2, 1}, {1, 1});
    auto r2 = matmul(a, ones);
    CHECK(r2(0, 0) == 3);
    CHECK(r2(1, 0) == 7);
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
    Rng rng(11);
    Tensor<double> a = random_fill<double>(rng, {5, 4}, Uniform{-1, 1});
    Tensor<double> b = random_fill<double>(rng, {4, 3}, Uniform{-1, 1});
    auto got = matmul(a, b);
    auto want = oracle::naive_matmul(a, b);
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    auto a = t2<float>({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = t2<float>({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul_transpose_left fixed values and oracle") {
    auto eye = t2<double>({2, 2}, {1, 0, 0, 1});
    auto col = t2<double>({2, 1}, {5, 6});
    auto r = matmul_transpose_left(eye, col);
    CHECK(r(0, 0) == 5);
    CHECK(r(1, 0) == 6);

    auto a = t2<double>({2, 2}, {1, 2, 3, 4});
    auto ones = t2<double>({2, 1}, {1, 1});
    auto r2 = matmul_transpose_left(a, ones);
    CHECK(r2(0, 0) == 4);
    CHECK(r2(1, 0) == 6);

    Rng rng(5);
    Tensor<double> x = random_fill<double>(rng, {6, 4}, Uniform{-1, 1});
    Tensor<double> y = random_fill<double>(rng, {6, 3}, Uniform{-1, 1});
    auto got = matmul_transpose_left(x, y);
    auto want = oracle::naive_matmul(oracle::transpose(x), y);
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("matmul_transpose_right matches transpose-then-matmul") {
    Rng rng(6);
    Tensor<double> x = random_fill<double>(rng, {3, 5}, Uniform{-1, 1});
    Tensor<double> y = random_fill<double>(rng, {4, 5}, Uniform{-1, 1});
    auto got = matmul_transpose_right(x, y);
    auto want = oracle::naive_matmul(x, oracle::transpose(y));
    REQUIRE(got.shape() == Shape{3, 4});
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("outer products") {
    auto u = t2<double>({2}, {1, 0});
    auto v = t2<double>({2}, {2, 3});
    auto r = outer(u, v);
    CHECK(r(0, 0) == 2);
    CHECK(r(0, 1) == 3);
    CHECK(r(1, 0) == 0);
    CHECK(r(1, 1) == 0);

    auto zero = Tensor<double>(Shape{3}, "z");
    auto r2 = outer(zero, v);
    for (std::size_t i = 0; i < r2.numel(); ++i) CHECK(r2[i] == 0);

    Rng rng(7);
    auto a = random_fill<double>(rng, {5}, Normal{0, 1});
    auto b = random_fill<double>(rng, {7}, Normal{0, 1});
    auto got = outer(a, b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) CHECK(got(i, j) == a[i] * b[j]);

    CHECK_THROWS_AS(outer(r, v), ShapeError);
}

TEST_CASE("hadamard elementwise with identity and zero") {
    auto a = t2<double>({2}, {1, 2});
    auto b = t2<double>({2}, {3, 4});
    auto r = hadamard(a, b);
    CHECK(r[0] == 3);
    CHECK(r[1] == 8);

    auto ones = t2<double>({2}, {1, 1});
    auto id = hadamard(a, ones);
    CHECK(id[0] == a[0]);
    CHECK(id[1] == a[1]);

    Tensor<double> zeros(Shape{2}, "z");
    auto z = hadamard(a, zeros);
    CHECK(z[0] == 0);
    CHECK(z[1] == 0);

    CHECK_THROWS_AS(hadamard(a, t2<double>({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("random_fill determinism and parameter validation") {
    Rng a(99, 4), b(99, 4);
    auto x = random_fill<float>(a, {40}, Uniform{-1, 1});
    auto y = random_fill<float>(b, {40}, Uniform{-1, 1});
    CHECK(oracle::bitwise_equal(x, y));

    Rng r(1);
    CHECK_THROWS_AS(random_fill<float>(r, {2}, Uniform{1, -1}), std::invalid_argument);
    CHECK_THROWS_AS(random_fill<float>(r, {2}, Normal{0, 0}), std::invalid_argument);
}

TEST_CASE("tensor shape/data consistency is enforced") {
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}, "t"), ShapeError);
    CHECK_THROWS_AS(Tensor<float>(Shape{0, 2}, "t"), ShapeError);
    Tensor<float> ok(Shape{2, 3}, "t");
    CHECK(ok.numel() == 6);
    CHECK(ok.bytes() == 24);
    ok.reshape({3, 2});
    CHECK(ok.dim(0) == 3);
    CHECK_THROWS_AS(ok.reshape({4}), ShapeError);
}

TEST_CASE("column_mean and add_row_vector") {
    auto m = t2<double>({2, 3}, {1, 2, 3, 5, 6, 7});
    auto mean = column_mean(m);
    CHECK(mean[0] == 3);
    CHECK(mean[1] == 4);
    CHECK(mean[2] == 5);

    auto bias = t2<double>({3}, {10, 20, 30});
    add_row_vector(m, bias);
    CHECK(m(0, 0) == 11);
    CHECK(m(1, 2) == 37);
}

TEST_CASE("argmax_row ties resolve to the lowest index") {
    auto m = t2<double>({1, 4}, {1, 7, 7, 2});
    CHECK(argmax_row(m, 0) == 1);
}
