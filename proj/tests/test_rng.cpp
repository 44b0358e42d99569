#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "opose/rng.hpp"

using opose::Rng;

TEST_SUITE("rng") {

TEST_CASE("splitmix64 matches the published reference vector") {
    uint64_t state = 0;
    CHECK(opose::splitmix64(state) == 0xe220a8397b1dcdafULL);
    CHECK(opose::splitmix64(state) == 0x6e789e6aa1b965f4ULL);
    CHECK(opose::splitmix64(state) == 0x06c45d188009454fULL);
}

TEST_CASE("identical seeds give identical streams, different seeds do not") {
    Rng a(987654321), b(987654321), c(987654322);
    bool all_equal_ac = true;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next_u64();
        CHECK(va == b.next_u64());
        if (va != c.next_u64()) all_equal_ac = false;
    }
    CHECK_FALSE(all_equal_ac);
}

TEST_CASE("uniform stays in [0,1) and respects custom bounds") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        double v = r.uniform(-2.5, 3.5);
        CHECK(v >= -2.5);
        CHECK(v < 3.5);
    }
}

TEST_CASE("uniform_int is inclusive and hits every value") {
    Rng r(11);
    std::set<int> seen;
    for (int i = 0; i < 2000; ++i) {
        int v = r.uniform_int(-2, 3);
        CHECK(v >= -2);
        CHECK(v <= 3);
        seen.insert(v);
    }
    CHECK(seen.size() == 6);
    CHECK(r.uniform_int(5, 5) == 5);
    CHECK_THROWS_AS((void)r.uniform_int(2, 1), std::invalid_argument);
}

TEST_CASE("gaussian moments are right over 1e5 draws") {
    Rng r(20240817);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double g = r.gaussian();
        sum += g;
        sumsq += g * g;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("derived child seeds differ across indices and nest deterministically") {
    std::set<uint64_t> seeds;
    for (uint64_t i = 0; i < 1000; ++i) seeds.insert(Rng::derive(42, i));
    CHECK(seeds.size() == 1000);
    CHECK(Rng::derive(42, 7) == Rng::derive(42, 7));
    CHECK(Rng::derive(42, 3, 9) == Rng::derive(Rng::derive(42, 3), 9));
    CHECK(Rng::derive(42, 3, 9) != Rng::derive(42, 9, 3));
}

}  // TEST_SUITE
