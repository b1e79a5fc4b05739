#include <catch2/catch_amalgamated.hpp>

#include "mvlift/rng.hpp"

using mvlift::Rng;

TEST_CASE("same seed reproduces the exact stream", "[rng]") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(a.uniform() == b.uniform());
        REQUIRE(a.normal() == b.normal());
        REQUIRE(a.uniform_int(97) == b.uniform_int(97));
    }
}

TEST_CASE("different seeds diverge", "[rng]") {
    Rng a(1), b(2);
    int equal = 0;
    for (int i = 0; i < 100; ++i)
        if (a.uniform() == b.uniform()) ++equal;
    REQUIRE(equal == 0);
}

TEST_CASE("fork derives independent streams from the seed only", "[rng]") {
    Rng parent(7);
    parent.uniform();
    parent.uniform();
    Rng f1 = parent.fork(3);

    Rng parent2(7);  // no draws consumed
    Rng f2 = parent2.fork(3);
    for (int i = 0; i < 100; ++i) REQUIRE(f1.uniform() == f2.uniform());

    Rng g = parent.fork(4);
    int equal = 0;
    Rng f3 = parent.fork(3);
    for (int i = 0; i < 100; ++i)
        if (f3.uniform() == g.uniform()) ++equal;
    REQUIRE(equal == 0);
}

TEST_CASE("uniform covers [0,1) with the right moments", "[rng]") {
    Rng rng(123);
    const int n = 100000;
    double sum = 0, sum2 = 0, lo = 1, hi = 0;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sum2 += u * u;
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    // SE of the mean is ~0.0009; allow 4 sigma.
    REQUIRE(std::abs(mean - 0.5) < 0.004);
    REQUIRE(std::abs(var - 1.0 / 12.0) < 0.004);
    REQUIRE(lo < 0.001);
    REQUIRE(hi > 0.999);
}

TEST_CASE("normal has standard moments", "[rng]") {
    Rng rng(321);
    const int n = 100000;
    double sum = 0, sum2 = 0, sum3 = 0;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        sum += z;
        sum2 += z * z;
        sum3 += z * z * z;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.013);           // 4 sigma
    REQUIRE(std::abs(var - 1.0) < 0.02);
    REQUIRE(std::abs(sum3 / n) < 0.05);        // skew near zero
}

TEST_CASE("uniform_int stays in range and is roughly flat", "[rng]") {
    Rng rng(5);
    const int n = 60000, k = 6;
    int counts[k] = {0};
    for (int i = 0; i < n; ++i) {
        auto v = rng.uniform_int(k);
        REQUIRE(v >= 0);
        REQUIRE(v < k);
        ++counts[v];
    }
    for (int c : counts) REQUIRE(std::abs(c - n / k) < 500);
    REQUIRE_THROWS_AS(rng.uniform_int(0), mvlift::ArgumentError);
}
