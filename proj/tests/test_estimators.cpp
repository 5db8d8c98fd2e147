#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rachforge/estimators.hpp"
#include "support/oracles.hpp"

using namespace rachforge;
namespace fs = std::filesystem;

TEST_CASE("likelihood table holds the trivial point masses", "[estimators]") {
    const auto t = build_likelihood_table(5, 3);
    CHECK(t.prob(0, 0, 0) == 1.0);
    CHECK(t.prob(1, 1, 0) == 1.0);
    CHECK(t.prob(1, 0, 0) == 0.0);
    CHECK(t.prob(1, 0, 1) == 0.0);
}

TEST_CASE("two devices on three preambles split 2/3 vs 1/3", "[estimators]") {
    const auto t = build_likelihood_table(3, 2);
    CHECK(t.prob(2, 2, 0) == Catch::Approx(2.0 / 3.0).margin(1e-15));
    CHECK(t.prob(2, 0, 1) == Catch::Approx(1.0 / 3.0).margin(1e-15));
    CHECK(t.prob(2, 1, 0) == 0.0);
    CHECK(t.prob(2, 1, 1) == 0.0);
}

TEST_CASE("likelihood table matches exhaustive enumeration", "[estimators]") {
    for (int f = 1; f <= 4; ++f) {
        const auto t = build_likelihood_table(f, 6);
        for (int n = 0; n <= 6; ++n) {
            const auto exact = oracle::contention_exact(f, n);
            for (int s = 0; s <= f; ++s) {
                for (int c = 0; s + c <= f; ++c) {
                    const auto it = exact.find({s, c});
                    const double want = it == exact.end() ? 0.0 : it->second;
                    INFO("F=" << f << " n=" << n << " (s,c)=(" << s << "," << c << ")");
                    CHECK(t.prob(n, s, c) == Catch::Approx(want).margin(1e-12));
                }
            }
        }
    }
}

TEST_CASE("likelihood rows are distributions", "[estimators]") {
    const auto t = build_likelihood_table(54, 80);
    for (int n = 0; n <= 80; n += 8) {
        double sum = 0.0;
        for (double p : t.rows[static_cast<std::size_t>(n)]) sum += p;
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("MLE recovers the degenerate counts", "[estimators]") {
    const auto t = build_likelihood_table(6, 10);
    CHECK(mle_estimate(0, 0, 6, t) == 0);
    CHECK(mle_estimate(1, 0, 5, t) == 1);
}

TEST_CASE("MLE picks the enumerated maximizer", "[estimators]") {
    const auto t = build_likelihood_table(3, 12);
    // (V_s, V_c, V_i) = (0, 1, 2): every n >= 2 can reach it; scan by hand.
    int best_n = 0;
    double best_p = -1.0;
    for (int n = 0; n <= 12; ++n) {
        const auto exact = oracle::contention_exact(3, n);
        const auto it = exact.find({0, 1});
        const double p = it == exact.end() ? 0.0 : it->second;
        if (p > best_p) {
            best_p = p;
            best_n = n;
        }
    }
    CHECK(mle_estimate(0, 1, 2, t) == best_n);
    CHECK(best_n == 2);
}

TEST_CASE("MLE ties break toward the smaller count", "[estimators]") {
    LikelihoodTable t;
    t.f = 2;
    t.n_max = 5;
    t.rows.assign(6, std::vector<double>(9, 0.0));
    t.rows[3][static_cast<std::size_t>(t.index(0, 1))] = 0.4;
    t.rows[5][static_cast<std::size_t>(t.index(0, 1))] = 0.4;
    t.rows[4][static_cast<std::size_t>(t.index(0, 1))] = 0.1;
    CHECK(mle_estimate(0, 1, 1, t) == 3);
}

TEST_CASE("MLE rejects observations off the simplex", "[estimators]") {
    const auto t = build_likelihood_table(4, 4);
    CHECK_THROWS_AS(mle_estimate(1, 1, 1, t), std::domain_error);
    CHECK_THROWS_AS(mle_estimate(-1, 0, 5, t), std::domain_error);
}

TEST_CASE("MoM inverts the idle-count curve", "[estimators]") {
    CHECK(mom_estimate(54, 54, 600) == 0.0);
    // Round-trip: the estimate must satisfy F (1-1/F)^n = V_i.
    for (int v_i : {1, 5, 20, 40, 53}) {
        const double n = mom_estimate(v_i, 54, 600);
        const double back = 54.0 * std::pow(53.0 / 54.0, n);
        CHECK(back == Catch::Approx(static_cast<double>(v_i)).margin(1e-9));
    }
    CHECK(mom_estimate(20, 54, 600) == Catch::Approx(53.137).margin(0.01));
    CHECK(mom_estimate(0, 54, 600) == 600.0);
    CHECK(mom_estimate(0, 54, 77) == 77.0);
    CHECK_THROWS_AS(mom_estimate(3, 1, 10), std::domain_error);
    CHECK_THROWS_AS(mom_estimate(-1, 54, 10), std::domain_error);
    CHECK_THROWS_AS(mom_estimate(55, 54, 10), std::domain_error);
}

TEST_CASE("ACB factor caps the expected load at F", "[estimators]") {
    CHECK(acb_from_backlog(0.0, 54) == 1.0);
    CHECK(acb_from_backlog(54.0, 54) == 1.0);
    CHECK(acb_from_backlog(108.0, 54) == Catch::Approx(0.5).margin(1e-12));
    CHECK(acb_from_backlog(540.0, 54) == Catch::Approx(0.1).margin(1e-12));
    CHECK(acb_from_backlog(400.0, 54) == Catch::Approx(0.135).margin(1e-12));
    CHECK_THROWS_AS(acb_from_backlog(-1.0, 54), std::domain_error);
}

TEST_CASE("genie controller opens only the ACB knob", "[estimators]") {
    const auto a = genie_controller(216, 54);
    CHECK(a.acb_factor == Catch::Approx(0.25).margin(1e-12));
    CHECK(a.backoff_exponent == 0);
    CHECK(a.tree_depth == 1);
    CHECK(a.tree_degree == 2);
    const auto idle = genie_controller(10, 54);
    CHECK(idle.acb_factor == 1.0);
}

TEST_CASE("backlog estimate compensates for the applied gate", "[estimators]") {
    const auto t = build_likelihood_table(54, 600);
    FrameObservation obs;
    obs.v_s = 1;
    obs.v_c = 0;
    obs.v_i = 53;
    obs.action.acb_factor = 0.5;
    // One transmitter seen through a half-open gate: two devices behind it.
    CHECK(estimate_backlog(obs, EstimatorKind::mle, &t, 54, 600) ==
          Catch::Approx(2.0).margin(1e-12));
    // MoM path: v_i = 53 inverts to about one transmitter.
    const double mom = estimate_backlog(obs, EstimatorKind::mom, nullptr, 54, 600);
    CHECK(mom == Catch::Approx(mom_estimate(53, 54, 600) / 0.5).margin(1e-12));
    // The compensated estimate still clamps at N_max.
    obs.v_s = 0;
    obs.v_c = 54;
    obs.v_i = 0;
    obs.action.acb_factor = 0.01;
    CHECK(estimate_backlog(obs, EstimatorKind::mom, nullptr, 54, 600) == 600.0);
    CHECK_THROWS_AS(estimate_backlog(obs, EstimatorKind::mle, nullptr, 54, 600),
                    std::invalid_argument);
}

TEST_CASE("estimator controller opens the gate before any observation", "[estimators]") {
    const auto t = build_likelihood_table(54, 600);
    EstimatorController ctl(EstimatorKind::mle, &t, 54, 600);
    const auto first = ctl.next(nullptr);
    CHECK(first.acb_factor == 1.0);
    CHECK(first.backoff_exponent == 0);
    CHECK(first.tree_depth == 1);
    CHECK(first.tree_degree == 2);

    FrameObservation obs;
    obs.v_s = 0;
    obs.v_c = 54;
    obs.v_i = 0;
    obs.action.acb_factor = 1.0;
    const auto second = ctl.next(&obs);
    CHECK(ctl.last_estimate() == 600.0);
    CHECK(second.acb_factor == Catch::Approx(54.0 / 600.0).margin(1e-12));
    CHECK_THROWS_AS(EstimatorController(EstimatorKind::mle, nullptr, 54, 600),
                    std::invalid_argument);
}

TEST_CASE("likelihood cache round trips through disk", "[estimators]") {
    const fs::path dir = fs::temp_directory_path() / "rachforge_liktab_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path file = dir / "liktab_F5_N7.bin";

    const auto built = cached_likelihood_table(5, 7, dir.string());
    REQUIRE(fs::exists(file));
    const auto loaded = cached_likelihood_table(5, 7, dir.string());
    REQUIRE(loaded.rows.size() == built.rows.size());
    for (std::size_t n = 0; n < built.rows.size(); ++n)
        CHECK(loaded.rows[n] == built.rows[n]);

    // A stale key under the same path triggers a rebuild, not an error.
    LikelihoodTable t;
    CHECK_FALSE(load_likelihood_table(t, 5, 9, file.string()));
    const auto regrown = cached_likelihood_table(5, 9, dir.string());
    CHECK(regrown.n_max == 9);

    // Corruption is loud.
    {
        std::ofstream bad(file, std::ios::binary | std::ios::trunc);
        bad << "RACHFLIK";  // magic only, then nothing
    }
    CHECK_THROWS_AS(load_likelihood_table(t, 5, 7, file.string()), IoError);
    {
        std::ofstream bad(file, std::ios::binary | std::ios::trunc);
        bad << "NOTATBLE" << std::string(64, '\0');
    }
    CHECK_THROWS_AS(load_likelihood_table(t, 5, 7, file.string()), IoError);

    // An empty cache dir means build-only; absent files just mean a miss.
    CHECK_FALSE(load_likelihood_table(t, 5, 7, (dir / "nope.bin").string()));
    const auto direct = cached_likelihood_table(3, 2, "");
    CHECK(direct.prob(2, 2, 0) == Catch::Approx(2.0 / 3.0).margin(1e-15));
    fs::remove_all(dir);
}
