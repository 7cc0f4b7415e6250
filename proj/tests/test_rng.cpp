#include "doctest.h"

#include <cmath>

#include "memdfa/rng.hpp"

using memdfa::Rng;

TEST_CASE("same (seed, stream) reproduces the same sequence") {
    Rng a(42, 7), b(42, 7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("streams are independent of consumption order") {
    Rng first(9, 1);
    const auto v1 = first.next_u64();
    Rng other(9, 2);
    other.next_u64();
    Rng again(9, 1);
    CHECK(again.next_u64() == v1);
}

TEST_CASE("different seeds and streams give different sequences") {
    CHECK(Rng(1, 0).next_u64() != Rng(2, 0).next_u64());
    CHECK(Rng(1, 0).next_u64() != Rng(1, 1).next_u64());
}

TEST_CASE("uniform stays in range and validates bounds") {
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        const double v = r.uniform(-2.0, 5.0);
        CHECK(v >= -2.0);
        CHECK(v < 5.0);
    }
    CHECK_THROWS_AS(r.uniform(1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(r.normal(0.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(r.normal(0.0, -1.0), std::invalid_argument);
}

TEST_CASE("uniform(-1,1) has near-zero mean over 10^4 samples") {
    Rng r(123);
    double sum = 0;
    for (int i = 0; i < 10000; ++i) sum += r.uniform(-1.0, 1.0);
    CHECK(std::abs(sum / 10000.0) < 0.05);
}

TEST_CASE("normal(0,1) has near-unit variance over 10^4 samples") {
    Rng r(321);
    double sum = 0, sq = 0;
    for (int i = 0; i < 10000; ++i) {
        const double v = r.normal(0.0, 1.0);
        sum += v;
        sq += v * v;
    }
    const double mean = sum / 10000.0;
    CHECK(std::abs(sq / 10000.0 - mean * mean - 1.0) < 0.1);
}
