#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <tuple>
#include <sstream>

#include <json.hpp>

#include "support/stats.hpp"
#include "zhang/coupling.hpp"

using namespace zhang;

TEST_CASE("epsilon_abn closed form") {
    // N=2: product 1 + 2^{-1} = 1.5, denominator 6 + 24 = 30.
    CHECK(epsilon_abn(0.0, 1.0, 2) == doctest::Approx(1.0 / 30).epsilon(1e-15));
    // N=3: (1 + 2^0)(1 + 2^{-1}) = 3, denominator 54.
    CHECK(epsilon_abn(0.2, 0.9, 3) == doctest::Approx(0.7 / 54).epsilon(1e-15));
    for (std::size_t n = 2; n <= 10; ++n)
        CHECK(epsilon_abn(0.3, 0.8, n) == doctest::Approx(0.5 * epsilon_abn(0.0, 1.0, n)).epsilon(1e-14));
    CHECK_THROWS_AS(epsilon_abn(0, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(epsilon_abn(0.5, 0.5, 3), std::invalid_argument);
    CHECK_THROWS_AS(epsilon_abn(0.6, 0.5, 3), std::invalid_argument);
}

TEST_CASE("t_epsilon and k_epsilon") {
    CHECK(contraction_rate(3) == 31.0 / 32);
    CHECK(contraction_rate(2) == 7.0 / 8);
    CHECK(contraction_rate(4) == 63.0 / 64);
    // ceil(2/1.1) = 2, ceil(log_{31/32}(2 eps / 3)) = 150.
    CHECK(t_epsilon(0.2, 0.9, 3, 0.7 / 54) == 600);
    CHECK(k_epsilon(3, 0.7 / 54) == 300);
    for (std::size_t n : {2u, 3u, 5u}) {
        const double at_base = 0.5 * static_cast<double>(n) * contraction_rate(n);
        CHECK(t_epsilon(0.2, 0.9, n, at_base) == 2 * 2);
        CHECK(t_epsilon(0.0, 1.0, n, at_base) == 2 * 2);
        CHECK(t_epsilon(0.5, 1.0, n, at_base) == 2 * 2);
    }
    std::uint64_t last = 0;
    for (double eps = 0.9; eps > 1e-8; eps *= 0.7) {
        const auto t = t_epsilon(0.1, 0.6, 4, eps);
        CHECK(t >= last);
        last = t;
    }
    CHECK_THROWS_AS(t_epsilon(0.2, 0.9, 3, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(t_epsilon(0.2, 0.9, 3, 1.5), std::invalid_argument);
}

TEST_CASE("schedule of epsilons and correction bounds") {
    const auto c = CouplingConstants::compute(0.2, 0.9, 5);
    REQUIRE(c.eps_schedule.size() == 5);
    REQUIRE(c.d_bounds.size() == 4);
    for (std::size_t k = 1; k < 5; ++k) {
        CHECK(c.eps_schedule[k] > c.eps_schedule[k - 1]);
        CHECK(c.eps_schedule[k] == doctest::Approx((1 + std::pow(2.0, 5.0 - k - 2)) * c.eps_schedule[k - 1]));
    }
    for (std::size_t k = 1; k <= 4; ++k) {
        double prod = 1.0;
        for (std::size_t l = 1; l < k; ++l) prod *= 1 + std::pow(2.0, 5.0 - l - 2);
        CHECK(c.d_bounds[k - 1] == doctest::Approx(std::pow(2.0, 5.0 - k) * prod * c.eps1));
    }
    // Merging at the last step still keeps |D| inside a quarter of [a', b].
    const double a_prime = 0.55 + 3 * c.eps_schedule[3];
    CHECK(c.d_bounds[3] <= (0.9 - a_prime) / 4);
}

TEST_CASE("correction_D") {
    const std::vector<double> zero(3, 0.0);
    CHECK(correction_D(zero, 1, 3) == 0.0);
    const std::vector<double> diff{0.01, -0.01, 0.0};
    CHECK(correction_D(diff, 1, 3) == doctest::Approx(-0.01));
    const double d = 0.003;
    const std::vector<double> four{d, d, 0.7, -0.2};
    CHECK(correction_D(four, 2, 4) == doctest::Approx(3 * d));
    CHECK_THROWS_AS(correction_D(diff, 0, 3), std::invalid_argument);
    CHECK_THROWS_AS(correction_D(diff, 3, 3), std::invalid_argument);
}

TEST_CASE("coupled_amount maps [a,b] onto itself uniformly") {
    CHECK(coupled_amount(0.37, 0.0, 0.2, 0.9) == 0.37);
    CHECK(coupled_amount(0.9, 0.3, 0.0, 1.0) == doctest::Approx(0.2));
    CHECK(coupled_amount(0.3, -0.2, 0.2, 0.9) == doctest::Approx(0.8));
    Rng rng(31);
    for (double d : {0.013, -0.2, 0.45, 1.7}) {
        std::vector<double> out;
        for (int i = 0; i < 100000; ++i) {
            const double v = coupled_amount(rng.uniform(0.2, 0.9), d, 0.2, 0.9);
            REQUIRE(v >= 0.2);
            REQUIRE(v <= 0.9);
            out.push_back(v);
        }
        const double ks = teststats::ks_statistic(out, [](double x) { return (x - 0.2) / 0.7; });
        CHECK(ks < teststats::ks_critical_001(out.size()));
    }
}

TEST_CASE("coefficient tracker") {
    CoefficientTracker t(4);
    CHECK(t.max_B() == 1.0);
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t y = 0; y < 4; ++y) CHECK(t.B(m, y) == (m == y ? 1.0 : 0.0));
    const auto l = t.open_sum();
    t.add_sum(3, l);
    t.topple(3);
    t.topple(2);
    const std::vector<double> init{0.6, 0.7, 0.8, 0.0};
    const std::vector<double> sums{1.3};
    // Direct simulation of the same topplings.
    ChainConfig c{0.6, 0.7, 0.8, 1.3};
    topple_site(c, 3);
    topple_site(c, 2);
    const auto h = t.evaluate(sums, init);
    for (std::size_t y = 0; y < 4; ++y) CHECK(h[y] == doctest::Approx(c[y]).epsilon(1e-14));
    CHECK(t.A(0, 1) == 0.25);
    CHECK_THROWS_AS(t.add_sum(0, 5), std::out_of_range);
}

TEST_CASE("contraction bounds hold along the forced dynamics") {
    Rng rng(77);
    SUBCASE("N=4, ten avalanches") {
        const auto r = verify_contraction(4, 10, rng);
        CHECK(r.rows.size() == 11);
        CHECK(r.rows[0].max_B == 1.0);
        CHECK(r.rows[10].max_B <= std::pow(63.0 / 64, 10));
        CHECK(std::pow(63.0 / 64, 10) == doctest::Approx(0.85430).epsilon(1e-5));
    }
    SUBCASE("several sizes and intervals") {
        for (std::size_t n : {2u, 3u, 4u, 6u}) {
            CHECK_NOTHROW(verify_contraction(n, 20, rng));
            CHECK_NOTHROW(verify_contraction(n, 20, rng, 0.2, 0.9));
            CHECK_NOTHROW(verify_contraction(n, 20, rng, 0.6, 0.8));
        }
    }
    SUBCASE("difference drops below eps after k_eps avalanches") {
        for (auto [n, a, b] : {std::tuple{2u, 0.0, 1.0}, std::tuple{3u, 0.2, 0.9}}) {
            const auto c = CouplingConstants::compute(a, b, n);
            const auto r = verify_contraction(n, c.k_eps, rng, a, b);
            CHECK(r.rows.back().max_diff < c.eps1);
            CHECK(r.rows.back().in_E_N);
        }
    }
    CHECK_THROWS_AS(verify_contraction(1, 3, rng), std::invalid_argument);
}

TEST_CASE("first merging avalanche matches the closed form") {
    // From E_N, load site 1 with R + U and let the avalanche run.
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + rng.index(8);
        std::vector<double> eta(n, 0.0);
        for (std::size_t x = 0; x + 1 < n; ++x) eta[x] = rng.uniform(0.5, 0.999);
        ChainProcess p(ChainParams{n, 0.0, 1.0}, ChainConfig(eta), Rng(1));
        double loaded = eta[0];
        do {
            const double u = rng.uniform(0.3, 0.6);
            p.step_with(0, u);
            loaded += u;
        } while (loaded < 1.0);
        const auto& h = p.config();
        const double head = loaded;  // eta_1 + R_1 + U(tau_1)
        for (std::size_t x = 1; x <= n - 2; ++x) {
            double want = std::ldexp(head, -static_cast<int>(x + 1));
            for (std::size_t j = 2; j <= x + 1; ++j) want += std::ldexp(eta[j - 1], -static_cast<int>(x + 2 - j));
            CHECK(h[x - 1] == doctest::Approx(want).epsilon(1e-12));
        }
        CHECK(h[n - 2] == 0.0);
        CHECK(h[n - 1] == doctest::Approx(h[n - 3]).epsilon(1e-12));
    }
}

TEST_CASE("site-N equality after a D-corrected first avalanche") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + rng.index(5);
        const double a = 0.2, b = 0.9;
        const auto c = CouplingConstants::compute(a, b, n);
        std::vector<double> eta(n, 0.0), xi(n, 0.0), diff(n, 0.0);
        for (std::size_t x = 0; x + 1 < n; ++x) {
            eta[x] = rng.uniform(0.6, 0.9);
            xi[x] = eta[x] + rng.uniform(-0.9, 0.9) * c.eps1;
            diff[x] = eta[x] - xi[x];
        }
        ChainProcess pe(ChainParams{n, a, b}, ChainConfig(eta), Rng(1));
        ChainProcess px(ChainParams{n, a, b}, ChainConfig(xi), Rng(2));
        const double u = 0.25 * (3 * (0.55 + 3 * c.eps1) + b);
        pe.step_with(0, u);
        px.step_with(0, coupled_amount(u, correction_D(diff, 1, n), a, b));
        CHECK(std::abs(pe.config()[n - 1] - px.config()[n - 1]) <= 1e-12);
    }
}

TEST_CASE("coupling runs") {
    const ChainParams p{3, 0.2, 0.9};
    SUBCASE("identical starts are merged at time zero") {
        const ChainConfig s{0.3, 0.6, 0.1};
        const auto r = run_coupling(p, s, s, 1, 1000);
        CHECK(r.merged);
        CHECK(r.merge_time == 0u);
        CHECK(r.phase_times == std::array<std::uint64_t, 4>{0, 0, 0, 0});
    }
    SUBCASE("merged chains stay identical") {
        Coupling c(p, ChainConfig{0, 0, 0}, ChainConfig{0.9, 0.9, 0.9}, 3);
        while (c.phase() != CouplingPhase::Merged && c.time() < 1'000'000) c.step();
        REQUIRE(c.phase() == CouplingPhase::Merged);
        CHECK(c.merging_avalanches() == 2);
        for (int i = 0; i < 100000; ++i) {
            c.step();
            REQUIRE(c.chain_a().config() == c.chain_b().config());
        }
    }
    SUBCASE("merging completes within N-1 avalanches") {
        int merged = 0;
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            const auto r = run_coupling(p, ChainConfig{0, 0, 0}, ChainConfig{0.9, 0.9, 0.9}, seed, 1'000'000);
            if (!r.merged) continue;
            ++merged;
            CHECK(r.merging_avalanches <= 2);
            CHECK(r.merging_entries >= 1);
            CHECK(r.phase_times[0] + r.phase_times[1] + r.phase_times[2] == *r.merge_time);
        }
        CHECK(merged > 0);
    }
    SUBCASE("starting together in E_1 mirrors the frame") {
        Coupling c(p, ChainConfig{0, 0.6, 0.7}, ChainConfig{0, 0.8, 0.6}, 4);
        CHECK(c.mirrored());
        CHECK(c.phase() == CouplingPhase::Contraction);
    }
    SUBCASE("strict policy restarts on violating draws") {
        const auto r = run_coupling(p, ChainConfig{0.6, 0.7, 0}, ChainConfig{0.8, 0.6, 0}, 5, 20000,
                                    CouplingPolicy::Strict);
        CHECK(r.restarts > 0);
        CHECK(r.phase_times[1] > 0);
    }
    SUBCASE("policy names") {
        CHECK(parse_coupling_policy("strict") == CouplingPolicy::Strict);
        CHECK(parse_coupling_policy(to_string(CouplingPolicy::Windowed)) == CouplingPolicy::Windowed);
        CHECK_THROWS_AS(parse_coupling_policy("lazy"), std::invalid_argument);
    }
}

TEST_CASE("N=2 coupling merges with a geometric-looking tail") {
    const ChainParams p{2, 0.5, 1.0};
    std::vector<double> times;
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
        const auto r = run_coupling(p, ChainConfig{0, 0}, ChainConfig{0.9, 0.9}, seed, 1'000'000);
        REQUIRE(r.merged);
        times.push_back(static_cast<double>(*r.merge_time));
    }
    std::sort(times.begin(), times.end());
    const double med = times[times.size() / 2];
    auto survival = [&](double t) {
        return static_cast<double>(times.end() - std::upper_bound(times.begin(), times.end(), t)) /
               static_cast<double>(times.size());
    };
    // Tail of an exponential-type law: S(3m) is far below S(m).
    CHECK(survival(med) <= 0.5);
    CHECK(survival(3 * med) < 0.25);
    CHECK(survival(6 * med) < 0.05);
}

TEST_CASE("each chain's additions keep the unconditioned law") {
    for (auto policy : {CouplingPolicy::Windowed, CouplingPolicy::Strict}) {
        const ChainParams p{3, 0.2, 0.9};
        std::vector<double> amounts_a, amounts_b;
        std::vector<std::uint64_t> sites_a(3, 0), sites_b(3, 0);
        std::array<std::uint64_t, 4> visited{};
        std::uint64_t seed = 100;
        while (amounts_a.size() < 100000) {
            Coupling c(p, ChainConfig{0, 0, 0}, ChainConfig{0.9, 0.9, 0.9}, seed++, policy);
            for (int i = 0; i < 3000 && amounts_a.size() < 100000; ++i) {
                ++visited[static_cast<std::size_t>(c.phase())];
                c.step();
                const auto& [ea, eb] = c.last_additions();
                amounts_a.push_back(ea.amount);
                amounts_b.push_back(eb.amount);
                ++sites_a[ea.site];
                ++sites_b[eb.site];
            }
        }
        auto cdf = [](double x) { return (x - 0.2) / 0.7; };
        const double crit = teststats::ks_critical_001(amounts_a.size());
        CHECK(teststats::ks_statistic(amounts_a, cdf) < crit);
        CHECK(teststats::ks_statistic(amounts_b, cdf) < crit);
        CHECK(teststats::chi_square_uniform_pvalue(sites_a) > 0.01);
        CHECK(teststats::chi_square_uniform_pvalue(sites_b) > 0.01);
        CHECK(visited[0] > 0);
        CHECK(visited[1] > 0);
        if (policy == CouplingPolicy::Windowed) {
            CHECK(visited[2] > 0);
            CHECK(visited[3] > 0);
        }
    }
}

TEST_CASE("coupling record export") {
    CouplingResult r;
    r.seed = 12;
    r.merged = true;
    r.merge_time = 345;
    r.restarts = 2;
    r.phase_times = {300, 40, 5, 0};
    std::ostringstream out;
    write_coupling_jsonl(out, r);
    const auto j = nlohmann::json::parse(out.str());
    CHECK(j["seed"] == 12);
    CHECK(j["merged"] == true);
    CHECK(j["merge_time"] == 345);
    CHECK(j["phase_times"].size() == 4);
    r.merged = false;
    r.merge_time.reset();
    std::ostringstream out2;
    write_coupling_jsonl(out2, r);
    CHECK(nlohmann::json::parse(out2.str())["merge_time"].is_null());
}
