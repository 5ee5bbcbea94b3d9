#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <numeric>

#include "chunkgen/common.hpp"

using namespace chunkgen;

TEST_CASE("rng is deterministic per seed", "[core]") {
    Rng a(42), b(42), c(7);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
        all_equal &= va == vb;
        any_diff |= va != vc;
    }
    REQUIRE(all_equal);
    REQUIRE(any_diff);
}

TEST_CASE("rng uniform ranges", "[core]") {
    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        double v = r.uniform(-3.0, 5.0);
        REQUIRE(v >= -3.0);
        REQUIRE(v < 5.0);
        int64_t k = r.uniform_int(2, 9);
        REQUIRE(k >= 2);
        REQUIRE(k <= 9);
    }
    // All inclusive-bound values reachable.
    Rng r2(2);
    std::array<int, 4> seen{0, 0, 0, 0};
    for (int i = 0; i < 1000; ++i) seen[size_t(r2.uniform_int(0, 3))]++;
    for (int s : seen) REQUIRE(s > 0);
}

TEST_CASE("rng gaussian moments", "[core]") {
    Rng r(123);
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        double g = r.gaussian();
        sum += g;
        sum2 += g * g;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng fork yields independent reproducible streams", "[core]") {
    Rng root(99);
    Rng f0 = root.fork(0);
    Rng f0b = Rng(99).fork(0);
    REQUIRE(f0.next_u64() == f0b.next_u64());
    Rng g0 = Rng(99).fork(0), g1 = Rng(99).fork(1);
    bool differ = false;
    for (int i = 0; i < 10; ++i) differ |= g0.next_u64() != g1.next_u64();
    REQUIRE(differ);
}

TEST_CASE("parallel_for covers every index exactly once", "[core]") {
    const int64_t n = 10007;
    for (int threads : {1, 4}) {
        std::vector<std::atomic<int>> hits(n);
        for (auto& h : hits) h = 0;
        parallel_for(n, threads, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) hits[size_t(i)]++;
        });
        for (int64_t i = 0; i < n; ++i) REQUIRE(hits[size_t(i)] == 1);
    }
}

TEST_CASE("parallel_for empty and single ranges", "[core]") {
    int calls = 0;
    parallel_for(0, 4, [&](int64_t, int64_t) { calls++; });
    REQUIRE(calls == 0);
    int64_t seen_lo = -1, seen_hi = -1;
    parallel_for(1, 4, [&](int64_t lo, int64_t hi) {
        seen_lo = lo;
        seen_hi = hi;
    });
    REQUIRE(seen_lo == 0);
    REQUIRE(seen_hi == 1);
}

TEST_CASE("error types carry messages and exit-code roles", "[core]") {
    UsageError u("bad flag");
    FormatError f("bad file");
    ConstraintError c("bad value");
    REQUIRE(std::string(u.what()) == "bad flag");
    REQUIRE(std::string(f.what()) == "bad file");
    REQUIRE(std::string(c.what()) == "bad value");
    REQUIRE_THROWS_AS(throw UsageError("x"), std::runtime_error);
}

TEST_CASE("strfmt formats like printf", "[core]") {
    REQUIRE(strfmt("%d/%s/%.2f", 3, "ab", 1.5) == "3/ab/1.50");
}
