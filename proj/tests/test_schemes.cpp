#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include <cmath>
#include <set>
#include <vector>

#include "rachforge/schemes.hpp"
#include "support/oracles.hpp"

using namespace rachforge;

TEST_CASE("acb gate passes always at factor 1 and never draws above it", "[schemes]") {
    Rng rng = make_rng(1, stream::kEnv);
    for (int i = 0; i < 1000; ++i) CHECK(acb_gate(1.0, rng));
    CHECK_THROWS_AS(acb_gate(0.0, rng), std::domain_error);
    CHECK_THROWS_AS(acb_gate(1.5, rng), std::domain_error);
}

TEST_CASE("acb gate empirical pass rates", "[schemes]") {
    Rng rng = make_rng(2, stream::kEnv);
    for (double beta : {0.5, 0.01}) {
        const int trials = 1000000;
        int passed = 0;
        for (int i = 0; i < trials; ++i) passed += acb_gate(beta, rng) ? 1 : 0;
        const double sigma = std::sqrt(beta * (1.0 - beta) * trials);
        CHECK(std::abs(passed - beta * trials) <= 3.0 * sigma + 1.0);
    }
}

TEST_CASE("backoff window bounds", "[schemes]") {
    CHECK(backoff_window(0).lo == 1);
    CHECK(backoff_window(0).hi == 1);  // 2^{-1} rounds up to 1
    CHECK(backoff_window(1).lo == 1);
    CHECK(backoff_window(1).hi == 2);
    CHECK(backoff_window(3).lo == 4);
    CHECK(backoff_window(3).hi == 8);
    CHECK(backoff_window(8).lo == 128);
    CHECK(backoff_window(8).hi == 256);
    CHECK_THROWS_AS(backoff_window(-1), std::domain_error);
    CHECK_THROWS_AS(backoff_window(9), std::domain_error);
}

TEST_CASE("backoff interval uniform over the window", "[schemes]") {
    Rng rng = make_rng(3, stream::kEnv);
    SECTION("beta 1 is a fair coin over {1,2}") {
        int ones = 0;
        const int trials = 200000;
        for (int i = 0; i < trials; ++i) {
            const int v = backoff_interval(1, rng);
            REQUIRE((v == 1 || v == 2));
            ones += v == 1 ? 1 : 0;
        }
        const double sigma = std::sqrt(0.25 * trials);
        CHECK(std::abs(ones - trials / 2) <= 4.0 * sigma);
    }
    SECTION("beta 3 covers {4..8} with mean 6") {
        double sum = 0.0;
        std::set<int> seen;
        const int trials = 200000;
        for (int i = 0; i < trials; ++i) {
            const int v = backoff_interval(3, rng);
            REQUIRE((v >= 4 && v <= 8));
            seen.insert(v);
            sum += v;
        }
        CHECK(seen.size() == 5);
        // var of uniform{4..8} = 2 -> sigma of mean = sqrt(2/trials)
        CHECK(sum / trials == Catch::Approx(6.0).margin(4.0 * std::sqrt(2.0 / trials)));
    }
    SECTION("beta 0 always defers exactly one frame") {
        for (int i = 0; i < 100; ++i) CHECK(backoff_interval(0, rng) == 1);
    }
}

TEST_CASE("preamble groups split as evenly as possible", "[schemes]") {
    SECTION("54 over 3 is exact") {
        const auto g = preamble_groups(54, 3);
        REQUIRE(g.size() == 3);
        for (const auto& r : g) CHECK(r.end - r.begin == 18);
    }
    SECTION("54 over 4 gives 14,14,13,13") {
        const auto g = preamble_groups(54, 4);
        REQUIRE(g.size() == 4);
        CHECK(g[0].end - g[0].begin == 14);
        CHECK(g[1].end - g[1].begin == 14);
        CHECK(g[2].end - g[2].begin == 13);
        CHECK(g[3].end - g[3].begin == 13);
    }
    SECTION("groups partition 0..F-1 for all F<=64, degree<=6") {
        for (int f = 2; f <= 64; ++f)
            for (int d = 2; d <= std::min(6, f); ++d) {
                const auto g = preamble_groups(f, d);
                REQUIRE(g.size() == static_cast<std::size_t>(d));
                int covered = 0;
                int prev_end = 0;
                for (const auto& r : g) {
                    CHECK(r.begin == prev_end);
                    CHECK(r.end >= r.begin);
                    covered += r.end - r.begin;
                    prev_end = r.end;
                }
                CHECK(covered == f);
                // earlier groups never smaller than later ones
                for (std::size_t i = 1; i < g.size(); ++i)
                    CHECK(g[i - 1].end - g[i - 1].begin >= g[i].end - g[i].begin);
            }
    }
}

TEST_CASE("preamble branch is the containing group, 1-based", "[schemes]") {
    for (int f : {7, 54, 64})
        for (int d = 2; d <= 6; ++d) {
            const auto g = preamble_groups(f, d);
            for (int p = 0; p < f; ++p) {
                const int b = preamble_branch(f, d, p);
                REQUIRE(b >= 1);
                REQUIRE(b <= d);
                const auto& r = g[static_cast<std::size_t>(b - 1)];
                CHECK(p >= r.begin);
                CHECK(p < r.end);
            }
        }
}

TEST_CASE("dq position anchors", "[schemes]") {
    CHECK(dq_position({3, 1}, 3) == 7);          // tree walk lands on leaf 7
    CHECK(dq_position({3, 2, 1}, 3) == 22);
    for (int a = 1; a <= 5; ++a) CHECK(dq_position({a}, 5) == a);
}

TEST_CASE("dq position equals explicit tree-leaf enumeration", "[schemes]") {
    for (int d = 2; d <= 6; ++d) {
        for (int len = 1; len <= 3; ++len) {
            std::vector<int> h(static_cast<std::size_t>(len), 1);
            while (true) {
                CHECK(dq_position(h, d) == oracle::dq_position_enum(h, d));
                int i = len - 1;
                while (i >= 0 && h[static_cast<std::size_t>(i)] == d) {
                    h[static_cast<std::size_t>(i)] = 1;
                    --i;
                }
                if (i < 0) break;
                h[static_cast<std::size_t>(i)] += 1;
            }
        }
    }
}

TEST_CASE("dq schedule frame anchors and block layout", "[schemes]") {
    CHECK(dq_schedule_frame(1, 2, 3, 3) == 4);    // CRQ 2 spans frames 2..4
    CHECK(dq_schedule_frame(1, 3, 7, 3) == 11);   // CRQ 3 starts after CRQ 2's 3 frames
    for (int d = 2; d <= 6; ++d)
        for (int i = 2; i <= 4; ++i) {
            std::int64_t span = 1;
            for (int k = 0; k < i - 1; ++k) span *= d;
            // last slot of CRQ i lines up with the enumerated block end
            CHECK(dq_schedule_frame(10, i, static_cast<int>(span), d) ==
                  oracle::dq_schedule_enum(10, i, static_cast<int>(span), d));
            CHECK(dq_schedule_frame(10, i, 1, d) == oracle::dq_schedule_enum(10, i, 1, d));
        }
    CHECK_THROWS_AS(dq_schedule_frame(1, 2, 4, 3), std::domain_error);  // mu > d^{i-1}
    CHECK_THROWS_AS(dq_schedule_frame(1, 2, 0, 3), std::domain_error);
}
