// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "support/stats.hpp"
#include "zhang/cli.hpp"
#include "zhang/core.hpp"
#include "zhang/coupling.hpp"
#include "zhang/experiment.hpp"
#include "zhang/finite_chain.hpp"
#include "zhang/lattice.hpp"

using namespace zhang;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ++ 1 ++
Verdict witness_rows() {
    Verdict v;
    struct Row {
        const char* policy;
        std::vector<double> heights;
        std::vector<double> counts;
    };
    const std::vector<Row> rows{{"left", {0, 0.7, 0.95, 0, 0.95, 0}, {0, 0, 1, 1, 0, 0}},
                                {"right", {0.5, 0.5, 0.525, 0, 0.525, 0.55}, {0, 1, 2, 3, 1, 0}},
                                {"parallel", {0, 0.7, 0.6, 0.7, 0.6, 0}, {0, 0, 1, 1, 0, 0}}};
    double worst = 0.0;
    for (const auto& row : rows) {
        std::ostringstream out, err;
        const int code = run_cli({"stabilize", "--chain", "0,0,1.4,1.2,0,0", "--policy", row.policy, "--format",
                                  "jsonl"},
                                 out, err);
        v.require(code == 0, std::string("exit code for ") + row.policy);
        const std::string text = out.str();
        const auto h0 = text.find('[') + 1, h1 = text.find(']');
        const auto c0 = text.find('[', h1) + 1, c1 = text.find(']', c0);
        const auto heights = parse_real_list(text.substr(h0, h1 - h0));
        const auto counts = parse_real_list(text.substr(c0, c1 - c0));
        v.require(heights.size() == 6 && counts == row.counts, std::string("counts for ") + row.policy);
        for (std::size_t i = 0; i < std::min<std::size_t>(6, heights.size()); ++i)
            worst = std::max(worst, std::abs(heights[i] - row.heights[i]));
    }
    v.require(worst <= 1e-12, "height error above 1e-12");
    v.note("max height error " + fmt("%.2g", worst));
    return v;
}

// ++ 2 ++
Verdict order_witness() {
    Verdict v;
    std::vector<double> h(60, 0.9);
    const std::size_t o = 28;
    h[o] = 0;
    h[o + 1] = 1.4;
    h[o + 2] = 1.2;
    h[o + 3] = 0;
    const auto g = make_geometry({60}, Boundary::Torus);
    double worst = 0.0;
    auto compare = [&](const LatticeConfig& c, const std::vector<double>& want) {
        for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(c.heights[o - 2 + i] - want[i]));
        for (std::size_t x = 0; x < c.size(); ++x)
            if (x + 2 < o || x >= o + 6) worst = std::max(worst, std::abs(c.heights[x] - 0.9));
    };
    LatticeConfig left(g, h), right(g, h);
    MassLedger l1(60), l2(60);
    topple_lattice(left, o + 1, l1);
    topple_lattice(left, o + 2, l1);
    compare(left, {0.9, 0.9, 0.7, 0.95, 0, 0.95, 0.9, 0.9});
    v.require(left.is_stable(), "left-first result is stable");
    topple_lattice(right, o + 2, l2);
    topple_lattice(right, o + 1, l2);
    compare(right, {0.9, 0.9, 1, 0, 1, 0.6, 0.9, 0.9});
    v.require(right.unstable_count() == 2, "right-first leaves two unstable sites");
    v.require(worst <= 1e-12, "error above 1e-12");
    v.note("max error " + fmt("%.2g", worst));
    return v;
}

// ++ 3 ++
Verdict abelian_trials() {
    Verdict v;
    Rng rng(3003);
    int mismatches = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.index(12);
        ChainConfig c{std::vector<double>(n)};
        for (auto& x : c.heights) x = rng.uniform01();
        c[rng.index(n)] += rng.uniform01();
        Rng prng(trial);
        const auto l = stabilize_chain(c, TopplingPolicy::LeftmostFirst);
        const auto r = stabilize_chain(c, TopplingPolicy::RightmostFirst);
        const auto u = stabilize_chain(c, TopplingPolicy::UniformRandom, &prng);
        worst = std::max({worst, max_abs_difference(l.config, r.config), max_abs_difference(l.config, u.config)});
        if (l.log.counts != r.log.counts || l.log.counts != u.log.counts) ++mismatches;
    }
    v.require(mismatches == 0, std::to_string(mismatches) + " count mismatches");
    v.require(worst <= 1e-12, "final configurations differ");
    v.note("1000 trials, max difference " + fmt("%.2g", worst));
    return v;
}

// ++ 4 ++
Verdict constants() {
    Verdict v;
    // Independent re-derivation: for N=2 the product is 3/2, for N=3 it is 2 * 3/2 = 3.
    const double e2 = 1.0 / (6.0 + 16.0 * 1.5);
    const double e3 = 0.7 / (6.0 + 16.0 * 3.0);
    v.require(std::abs(epsilon_abn(0, 1, 2) - 1.0 / 30) <= 1e-15 && std::abs(e2 - 1.0 / 30) <= 1e-15,
              "epsilon(0,1,2)");
    v.require(std::abs(epsilon_abn(0.2, 0.9, 3) - 0.7 / 54) <= 1e-15 && std::abs(e3 - 0.7 / 54) <= 1e-15,
              "epsilon(0.2,0.9,3)");
    // q = 1 - 2^{-5} = 31/32; smallest k with (31/32)^k <= 2 eps / 3 is 150.
    const double target = 2 * (0.7 / 54) / 3;
    int k = 0;
    double qk = 1.0;
    while (qk > target) {
        qk *= 31.0 / 32;
        ++k;
    }
    const std::uint64_t oracle = 2 * 2 * static_cast<std::uint64_t>(k);
    const auto t = t_epsilon(0.2, 0.9, 3, 0.7 / 54);
    v.require(k == 150 && oracle == 600 && t == 600, "t_epsilon");
    v.note("eps(0,1,2)=" + fmt("%.9g", epsilon_abn(0, 1, 2)) + ", eps(0.2,0.9,3)=" +
           fmt("%.9g", epsilon_abn(0.2, 0.9, 3)) + ", t_eps=" + std::to_string(t));
    return v;
}

// ++ 5 ++
Verdict contraction() {
    Verdict v;
    Rng rng(5005);
    double worst_ratio = 0.0, worst_residual = 0.0;
    for (std::size_t n : {2u, 3u, 4u, 6u}) {
        for (int rep = 0; rep < 5; ++rep) {
            try {
                const auto r = verify_contraction(n, 20, rng);
                for (const auto& row : r.rows) {
                    worst_ratio = std::max(worst_ratio, row.max_B / row.b_bound);
                    worst_residual = std::max(worst_residual, row.residual);
                }
            } catch (const BoundViolation& e) {
                v.require(false, e.what());
            }
        }
    }
    v.require(worst_ratio <= 1.0 + 1e-12, "max B above the geometric bound");
    v.require(worst_residual <= 1e-9, "linear shadow residual");
    v.note("max B / bound " + fmt("%.4f", worst_ratio) + ", residual " + fmt("%.2g", worst_residual));
    return v;
}

// ++ 6 ++
Verdict coupling_success() {
    Verdict v;
    const ChainParams p{3, 0.2, 0.9};
    const ChainConfig eta{0, 0, 0}, xi{0.9, 0.9, 0.9};
    std::vector<int> merged(500, 0), stayed(500, 1), within(500, 1);
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < 500; ++s) {
        Coupling c(p, eta, xi, static_cast<std::uint64_t>(s));
        while (c.phase() != CouplingPhase::Merged && c.time() < 1'000'000) c.step();
        if (c.phase() != CouplingPhase::Merged) continue;
        merged[s] = 1;
        within[s] = c.merging_avalanches() <= 2;
        for (int i = 0; i < 100000; ++i) {
            c.step();
            if (!(c.chain_a().config() == c.chain_b().config())) {
                stayed[s] = 0;
                break;
            }
        }
    }
    int m = 0, bad_stay = 0, bad_within = 0;
    for (int s = 0; s < 500; ++s) {
        m += merged[s];
        if (merged[s] && !stayed[s]) ++bad_stay;
        if (merged[s] && !within[s]) ++bad_within;
    }
    v.require(m > 0, "no seed merged");
    v.require(bad_stay == 0, std::to_string(bad_stay) + " merged pairs separated");
    v.require(bad_within == 0, std::to_string(bad_within) + " merges needed more than 2 avalanches");
    v.note("merged " + std::to_string(m) + "/500 (windowed contraction)");
    return v;
}

// ++ 7 ++
Verdict marginal_fidelity() {
    Verdict v;
    const ChainParams p{3, 0.2, 0.9};
    for (auto policy : {CouplingPolicy::Windowed, CouplingPolicy::Strict}) {
        std::vector<double> ua, ub;
        std::vector<std::uint64_t> sa(3, 0), sb(3, 0);
        std::uint64_t transitions = 0;
        std::uint64_t seed = 7000;
        while (ua.size() < 200000) {
            Coupling c(p, ChainConfig{0, 0, 0}, ChainConfig{0.9, 0.9, 0.9}, seed++, policy);
            for (int i = 0; i < 5000 && ua.size() < 200000; ++i) {
                const auto before = c.phase();
                c.step();
                transitions += c.phase() != before;
                const auto& [ea, eb] = c.last_additions();
                ua.push_back(ea.amount);
                ub.push_back(eb.amount);
                ++sa[ea.site];
                ++sb[eb.site];
            }
        }
        auto cdf = [](double x) { return (x - 0.2) / 0.7; };
        const double crit = teststats::ks_critical_001(ua.size());
        const double ka = teststats::ks_statistic(ua, cdf), kb = teststats::ks_statistic(ub, cdf);
        const double pa = teststats::chi_square_uniform_pvalue(sa), pb = teststats::chi_square_uniform_pvalue(sb);
        const std::string tag(to_string(policy));
        v.require(ka < crit && kb < crit, tag + " KS on amounts");
        v.require(pa > 0.01 && pb > 0.01, tag + " chi-square on sites");
        v.require(transitions > 0, tag + " no phase transitions");
        v.note(tag + ": KS " + fmt("%.4f", ka) + "/" + fmt("%.4f", kb) + " (crit " + fmt("%.4f", crit) +
               "), chi2 p " + fmt("%.3f", pa) + "/" + fmt("%.3f", pb) + ", " + std::to_string(transitions) +
               " transitions");
    }
    return v;
}

// ++ 8 ++
Verdict convergence() {
    Verdict v;
    const ChainParams p{5, 0.3, 0.9};
    ChainProcess from_zero(p, ChainConfig(std::vector<double>(5, 0.0)), Rng(8001));
    ChainProcess from_full(p, ChainConfig(std::vector<double>(5, 0.99)), Rng(8002));
    MarginalStats s0(5, 256), s1(5, 256);
#pragma omp parallel sections
    {
#pragma omp section
        s0 = run_stationary(from_zero, 100000, 1000000);
#pragma omp section
        s1 = run_stationary(from_full, 100000, 1000000);
    }
    double worst = 0.0;
    for (std::size_t x = 0; x < 5; ++x) worst = std::max(worst, empirical_tv_distance(s0, s1, x));
    v.require(worst < 0.02, "stationary TV " + fmt("%.4f", worst));
    v.note("max per-site TV " + fmt("%.4f", worst));

    // Time-t laws from both starts over an ensemble; TV should fall until it hits the sampling floor.
    std::vector<std::uint64_t> times;
    for (std::uint64_t t = 1; t <= 1024; t *= 2) times.push_back(t);
    const std::size_t replicas = 40000;
    const auto e0 = ensemble_marginals(p, ChainConfig(std::vector<double>(5, 0.0)), times, replicas, 81, 64);
    const auto e1 = ensemble_marginals(p, ChainConfig(std::vector<double>(5, 0.99)), times, replicas, 82, 64);
    const auto e2 = ensemble_marginals(p, ChainConfig(std::vector<double>(5, 0.0)), times, replicas, 83, 64);
    double floor = 0.0;
    for (std::size_t x = 0; x < 5; ++x) floor = std::max(floor, empirical_tv_distance(e0.back(), e2.back(), x));
    std::vector<double> tv;
    for (std::size_t i = 0; i < times.size(); ++i) {
        double m = 0.0;
        for (std::size_t x = 0; x < 5; ++x) m = std::max(m, empirical_tv_distance(e0[i], e1[i], x));
        tv.push_back(m);
    }
    bool monotone = true;
    std::string series;
    for (std::size_t i = 0; i < tv.size(); ++i) {
        series += (i ? "," : "") + fmt("%.3f", tv[i]);
        if (i > 0 && tv[i - 1] > 2 * floor && tv[i] > tv[i - 1]) monotone = false;
    }
    v.require(monotone, "time-t TV not decreasing above the noise floor");
    v.require(tv.front() > 4 * floor, "no initial separation to decay from");
    v.note("TV at t=1,2,..,1024: " + series + " (floor " + fmt("%.3f", floor) + ")");
    return v;
}

// ++ 9 ++
Verdict quasi_units() {
    Verdict v;
    ChainProcess proc(ChainParams{30, 0.6, 0.8}, Rng(9009));
    const auto s = run_stationary(proc, 100000, 1000000);
    double worst_mean = 0.0, worst_var = 0.0, low_bin = 0.0;
    std::size_t worst_site = 0;
    for (std::size_t x = 0; x < 30; ++x) {
        low_bin = std::max(low_bin, static_cast<double>(s.histogram(x)[0]) / static_cast<double>(s.count()));
        const double dm = std::abs(s.mean(x) - 0.7);
        if (dm > worst_mean) worst_site = x;
        worst_mean = std::max(worst_mean, dm);
        worst_var = std::max(worst_var, s.variance(x));
    }
    v.require(worst_mean <= 0.05, "mean off by " + fmt("%.4f", worst_mean) + " at site " + std::to_string(worst_site + 1));
    v.require(worst_var < 0.01, "variance " + fmt("%.4f", worst_var));
    v.note("max |mean - 0.7| " + fmt("%.4f", worst_mean) + " (site " + std::to_string(worst_site + 1) +
           "), max variance " + fmt("%.5f", worst_var) + ", max mass in lowest bin " + fmt("%.4f", low_bin));
    return v;
}

// ++ 10 ++
Verdict conservation() {
    Verdict v;
    for (const auto& sides : {std::vector<std::size_t>{1000}, std::vector<std::size_t>{32, 32}}) {
        const auto g = make_geometry(sides, Boundary::Torus);
        Rng gen(10010), rng(10011);
        const auto initial = generate({DensityKind::IidUniform, 1.2}, g, gen);
        auto c = initial;
        MassLedger ledger(c.size());
        MarkovOptions o;
        o.t_max = 1e9;
        o.max_events = 1'000'000;
        o.snapshot_every = 1e6 / static_cast<double>(c.size()) / 100.0;
        double worst_identity = 0.0, worst_drift = 0.0;
        std::size_t snaps = 0;
        const double m0 = initial.total();
        o.on_snapshot = [&](const LatticeConfig& cur, const MassLedger& l, const Snapshot& s) {
            ++snaps;
            worst_identity = std::max(worst_identity, mass_identity_check(initial, cur, l).max());
            worst_drift = std::max(worst_drift, std::abs(s.total_mass - m0));
        };
        const auto verdict = markov_run(c, ledger, rng, o);
        worst_identity = std::max(worst_identity, mass_identity_check(initial, c, ledger).max());
        worst_drift = std::max(worst_drift, std::abs(c.total() - m0));
        const std::string tag = g->describe();
        v.require(verdict.events == 1'000'000, tag + " event count");
        v.require(snaps >= 100, tag + " fewer than 100 snapshots");
        v.require(worst_drift <= 1e-9, tag + " mass drift " + fmt("%.2g", worst_drift));
        v.require(worst_identity <= 1e-9, tag + " identity residual " + fmt("%.2g", worst_identity));
        v.note(tag + ": " + std::to_string(verdict.topplings) + " topplings, " + std::to_string(snaps) +
               " snapshots, drift " + fmt("%.2g", worst_drift) + ", residual " + fmt("%.2g", worst_identity));
    }
    return v;
}

// ++ 11 ++
Verdict internal_bonds() {
    Verdict v;
    const auto g = make_geometry({32, 32}, Boundary::Torus);
    Rng gen(11011), rng(11012), pick(11013);
    auto c = generate({DensityKind::Checkerboard, 0.55}, g, gen);
    MassLedger ledger(c.size());
    MarkovOptions o;
    o.t_max = 120;
    o.snapshot_every = 1.0;
    std::size_t times_checked = 0, boxes = 0, violations = 0;
    double slack = 1e300;
    o.on_snapshot = [&](const LatticeConfig& cur, const MassLedger& l, const Snapshot& s) {
        if (s.t < 20.0) return;
        bool any = false;
        for (int attempt = 0; attempt < 200 && !any; ++attempt) {
            const std::vector<std::size_t> org{pick.index(32), pick.index(32)};
            const std::vector<std::size_t> ext{2 + pick.index(8), 2 + pick.index(8)};
            const auto region = box_region(*g, org, ext);
            const auto bc = bond_bound_check(cur, region, l);
            if (!bc.precondition) continue;
            any = true;
            ++boxes;
            if (!bc.holds) ++violations;
            slack = std::min(slack, bc.mass - bc.bound);
        }
        times_checked += any;
    };
    const auto verdict = markov_run(c, ledger, rng, o);
    v.require(verdict.outcome != Outcome::Stabilized, "run was not active");
    v.require(times_checked >= 100, "only " + std::to_string(times_checked) + " times with a fully toppled box");
    v.require(violations == 0, std::to_string(violations) + " violations");
    v.note(std::to_string(boxes) + " boxes at " + std::to_string(times_checked) + " times, min slack " +
           fmt("%.4f", slack));
    return v;
}

// ++ 12 ++
Verdict thresholds() {
    Verdict v;
    MarkovOptions o;
    o.t_max = 200;
    auto run = [&](DensityKind kind, double rho, std::vector<std::size_t> sides, Boundary b, std::uint64_t seed) {
        const auto g = make_geometry(std::move(sides), b);
        const DensitySpec spec{kind, rho};
        auto s = stabilizability_experiment(spec, g, o, 20, seed);
        v.require(s.max_conservation_residual <= 1e-9, spec.describe() + " conservation");
        return std::make_pair(s, spec.describe() + "@" + g->describe());
    };
    std::string notes;
    for (double rho : {0.2, 0.4})
        for (auto b : {Boundary::Torus, Boundary::DissipativeBox}) {
            for (const auto& sides : {std::vector<std::size_t>{64}, std::vector<std::size_t>{32, 32}}) {
                const auto [s, tag] = run(DensityKind::IidUniform, rho, sides, b, 12001);
                v.require(s.fraction_stabilized == 1.0, "(a) " + tag);
            }
        }
    v.note("(a) iid 0.2/0.4 all stabilized");
    for (const auto& sides : {std::vector<std::size_t>{64}, std::vector<std::size_t>{32, 32}}) {
        const auto [s, tag] = run(DensityKind::Constant, 1.1, sides, Boundary::Torus, 12002);
        bool slopes = true;
        for (const auto& r : s.replicas) slopes = slopes && r.verdict.min_M_slope > 0.0;
        v.require(s.fraction_stabilized == 0.0 && slopes, "(b) " + tag);
        v.note("(b) " + tag + " slope " + fmt("%.3f", s.mean_active_slope));
    }
    {
        const auto [s, tag] = run(DensityKind::Checkerboard, 0.55, {32, 32}, Boundary::Torus, 12003);
        v.require(s.fraction_stabilized == 0.0, "(c) " + tag);
        v.note("(c) stabilized " + fmt("%.2f", s.fraction_stabilized));
    }
    {
        const auto [s, tag] = run(DensityKind::NearFull, 0.8, {32, 32}, Boundary::Torus, 12004);
        v.require(s.fraction_stabilized == 0.0, "(d) " + tag);
        v.note("(d) stabilized " + fmt("%.2f", s.fraction_stabilized));
    }
    return v;
}

// ++ 13 ++
Verdict checkerboard_period() {
    Verdict v;
    for (std::size_t d : {1u, 2u, 3u}) {
        const auto g = make_geometry(std::vector<std::size_t>(d, d == 3 ? 8 : 16), Boundary::Torus);
        for (double rho : {0.5, 0.6, 0.9}) {
            Rng rng(13000 + d);
            const auto start = generate({DensityKind::Checkerboard, rho}, g, rng);
            auto c = start;
            bool ok = true;
            for (int round = 1; round <= 1000 && ok; ++round) {
                c = parallel_round(c);
                const bool same = c.heights == start.heights;
                ok = (round % 2 == 0) ? same : !same;
            }
            v.require(ok, "d=" + std::to_string(d) + " rho=" + fmt("%.1f", rho));
        }
    }
    v.note("d=1,2,3, 1000 rounds each, bitwise");
    return v;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"two-site witness exactness", witness_rows},
        {"order-dependence witness", order_witness},
        {"single-addition abelianness", abelian_trials},
        {"coupling constants", constants},
        {"contraction bound", contraction},
        {"coupling success", coupling_success},
        {"marginal fidelity of the coupling", marginal_fidelity},
        {"empirical convergence", convergence},
        {"quasi-units", quasi_units},
        {"torus conservation", conservation},
        {"internal-bond bound", internal_bonds},
        {"density thresholds", thresholds},
        {"parallel checkerboard periodicity", checkerboard_period},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v.require(false, std::string("exception: ") + e.what());
        }
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        failures += !v.pass;
        std::printf("%s %2zu %-34s [%.1fs] %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, dt.count(),
                    v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
