#include "zhang/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace zhang {

namespace {

void validate_interval(double a, double b) {
    if (!(a >= 0.0 && a < b && b <= 1.0))
        throw std::invalid_argument("addition interval must satisfy 0 <= a < b <= 1");
}

// Ceiling that absorbs rounding noise just above an integer.
std::uint64_t ceil_tol(double x) {
    const double r = std::round(x);
    if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<std::uint64_t>(std::max(r, 0.0));
    return static_cast<std::uint64_t>(std::max(std::ceil(x), 0.0));
}

std::size_t ceil_half3(std::size_t n) { return (3 * n + 1) / 2; }

}  // namespace

double contraction_rate(std::size_t n) {
    return 1.0 - std::ldexp(1.0, -static_cast<int>(ceil_half3(n)));
}

double epsilon_abn(double a, double b, std::size_t n) {
    validate_interval(a, b);
    if (n < 2) throw std::invalid_argument("epsilon_abn needs N >= 2");
    const int ni = static_cast<int>(n);
    double prod = 1.0;
    for (int l = 1; l <= ni - 1; ++l) prod *= 1.0 + std::ldexp(1.0, ni - 2 - l);
    return (b - a) / (6.0 + 16.0 * prod);
}

std::uint64_t k_epsilon(std::size_t n, double eps) {
    if (n < 1) throw std::invalid_argument("k_epsilon needs N >= 1");
    const double x = 2.0 * eps / static_cast<double>(n);
    if (!(x > 0.0 && x < 1.0)) throw std::invalid_argument("need 0 < 2 eps / N < 1");
    return 2 * ceil_tol(std::log(x) / std::log(contraction_rate(n)));
}

std::uint64_t t_epsilon(double a, double b, std::size_t n, double eps) {
    validate_interval(a, b);
    return ceil_tol(2.0 / (a + b)) * k_epsilon(n, eps);
}

double correction_D(std::span<const double> diff, std::size_t k, std::size_t n) {
    if (k < 1 || k + 1 > n) throw std::invalid_argument("correction_D: need 1 <= k <= N - 1");
    if (diff.size() < n - k) throw std::invalid_argument("correction_D: difference vector too short");
    double d = 0.0;
    for (std::size_t y = 0; y < n - k; ++y) d += std::ldexp(diff[y], static_cast<int>(y));
    return d;
}

double coupled_amount(double u, double d, double a, double b) {
    if (d == 0.0) return u;
    const double w = b - a;
    double r = std::fmod(u + d - a, w);
    if (r < 0.0) r += w;
    if (r >= w) r = 0.0;
    return a + r;
}

CouplingConstants CouplingConstants::compute(double a, double b, std::size_t n) {
    CouplingConstants c;
    c.a = a;
    c.b = b;
    c.n = n;
    c.eps1 = epsilon_abn(a, b, n);
    const int ni = static_cast<int>(n);
    c.eps_schedule.push_back(c.eps1);
    for (int k = 1; k < ni; ++k) c.eps_schedule.push_back((1.0 + std::ldexp(1.0, ni - k - 2)) * c.eps_schedule.back());
    // d_k = 2^{N-k} prod_{l<k} (1 + 2^{N-l-2}) eps_1 = 2^{N-k} eps_k
    for (int k = 1; k <= ni - 1; ++k) c.d_bounds.push_back(std::ldexp(c.eps_schedule[k - 1], ni - k));
    c.k_eps = k_epsilon(n, c.eps1);
    c.t_eps = t_epsilon(a, b, n, c.eps1);
    return c;
}

// ++ CoefficientTracker ++++++++++++++++++++++++++++++++++++++++++++++++++++

CoefficientTracker::CoefficientTracker(std::size_t n) : n_(n), forms_(n, std::vector<double>(n, 0.0)) {
    for (std::size_t y = 0; y < n; ++y) forms_[y][y] = 1.0;
}

std::size_t CoefficientTracker::open_sum() {
    for (auto& f : forms_) f.insert(f.begin() + static_cast<std::ptrdiff_t>(k_), 0.0);
    return k_++;
}

void CoefficientTracker::add_sum(std::size_t site, std::size_t l) {
    if (l >= k_) throw std::out_of_range("CoefficientTracker: unknown sum variable");
    forms_.at(site)[l] += 1.0;
}

void CoefficientTracker::topple(std::size_t site) {
    auto& f = forms_.at(site);
    for (std::size_t i = 0; i < width(); ++i) {
        const double share = f[i] / 2.0;
        if (site > 0) forms_[site - 1][i] += share;
        if (site + 1 < n_) forms_[site + 1][i] += share;
        f[i] = 0.0;
    }
}

std::vector<double> CoefficientTracker::evaluate(std::span<const double> sums, std::span<const double> initial) const {
    if (sums.size() != k_ || initial.size() != n_) throw std::invalid_argument("CoefficientTracker: wrong arity");
    std::vector<double> h(n_, 0.0);
    for (std::size_t y = 0; y < n_; ++y) {
        for (std::size_t l = 0; l < k_; ++l) h[y] += forms_[y][l] * sums[l];
        for (std::size_t m = 0; m < n_; ++m) h[y] += forms_[y][k_ + m] * initial[m];
    }
    return h;
}

double CoefficientTracker::A(std::size_t l, std::size_t y) const { return forms_.at(y).at(l); }
double CoefficientTracker::B(std::size_t m, std::size_t y) const { return forms_.at(y).at(k_ + m); }

double CoefficientTracker::max_B() const {
    double m = 0.0;
    for (const auto& f : forms_)
        for (std::size_t i = k_; i < width(); ++i) m = std::max(m, f[i]);
    return m;
}

// ++ verify_contraction ++++++++++++++++++++++++++++++++++++++++++++++++++++

namespace {

ChainConfig random_E_N(std::size_t n, Rng& rng) {
    ChainConfig c(std::vector<double>(n, 0.0));
    for (std::size_t x = 0; x + 1 < n; ++x) c[x] = rng.uniform(0.5, std::nextafter(1.0, 0.0));
    return c;
}

}  // namespace

ContractionReport verify_contraction(std::size_t n, std::uint64_t k_max, Rng& rng, double a, double b) {
    if (n < 2) throw std::invalid_argument("verify_contraction needs N >= 2");
    const ChainParams params{n, a, b};
    params.validate();
    const double heavy = 0.5 * (a + b);
    const double q = contraction_rate(n);
    const std::uint64_t max_gap = static_cast<std::uint64_t>(std::ceil(2.0 / (a + b)));

    const ChainConfig eta = random_E_N(n, rng);
    const ChainConfig xi = random_E_N(n, rng);
    ChainProcess pa(params, eta, rng.split(1));
    ChainProcess pb(params, xi, rng.split(2));
    CoefficientTracker tracker(n);
    std::vector<double> sums;

    ContractionReport report;
    report.n = n;
    report.rows.push_back({0, 0, tracker.max_B(), 1.0, 0.0, max_abs_difference(eta, xi), 0.5 * static_cast<double>(n), true});

    auto fail = [&](const std::string& what, std::uint64_t k) {
        throw BoundViolation("verify_contraction(N=" + std::to_string(n) + ", k=" + std::to_string(k) + "): " + what);
    };

    for (std::uint64_t k = 1; k <= k_max; ++k) {
        const std::size_t target = (k % 2 == 1) ? n - 1 : 0;
        const std::size_t l = tracker.open_sum();
        double s = 0.0;
        std::uint64_t gap = 0;
        StepRecord ra, rb;
        do {
            const double u = rng.uniform(heavy, b);
            s += u;
            ++gap;
            ra = pa.step_with(target, u);
            rb = pb.step_with(target, u);
            if (gap > 64 * max_gap) fail("target site never toppled", k);
        } while (ra.log.total() == 0);
        if (rb.log.total() == 0) fail("avalanche times differ between chains", k);

        tracker.add_sum(target, l);
        for (auto site : ra.log.sequence) tracker.topple(site);
        sums.push_back(s);

        ContractionRow row;
        row.k = k;
        row.gap = gap;
        row.max_B = tracker.max_B();
        row.b_bound = std::pow(q, static_cast<double>(k));
        const auto shadow = tracker.evaluate(sums, eta.heights);
        for (std::size_t y = 0; y < n; ++y) row.residual = std::max(row.residual, std::abs(shadow[y] - pa.config()[y]));
        row.max_diff = max_abs_difference(pa.config(), pb.config());
        row.diff_bound = 0.5 * static_cast<double>(n) * row.b_bound;
        const std::size_t empty_site = (k % 2 == 0) ? n - 1 : 0;
        const bool parity = in_class_E(pa.config(), empty_site) && in_class_E(pb.config(), empty_site);
        row.in_E_N = (k % 2 == 0) && parity;
        report.rows.push_back(row);

        if (row.max_B > row.b_bound + 1e-12) fail("coefficient bound exceeded", k);
        if (row.residual > 1e-9) fail("linear shadow residual above 1e-9", k);
        if (row.max_diff > row.diff_bound + 1e-12) fail("difference bound exceeded", k);
        if (gap > max_gap) fail("inter-avalanche gap above ceil(2/(a+b))", k);
        if (!parity) fail("avalanche did not alternate between E_N and E_1", k);
    }
    return report;
}

// ++ Coupling ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++

std::string_view to_string(CouplingPhase phase) {
    switch (phase) {
        case CouplingPhase::Independent: return "independent";
        case CouplingPhase::Contraction: return "contraction";
        case CouplingPhase::Merging: return "merging";
        case CouplingPhase::Merged: return "merged";
    }
    return "?";
}

std::string_view to_string(CouplingPolicy policy) {
    return policy == CouplingPolicy::Strict ? "strict" : "windowed";
}

CouplingPolicy parse_coupling_policy(std::string_view name) {
    if (name == "strict") return CouplingPolicy::Strict;
    if (name == "windowed") return CouplingPolicy::Windowed;
    throw std::invalid_argument("unknown coupling policy '" + std::string(name) + "'");
}

Coupling::Coupling(ChainParams params, ChainConfig eta, ChainConfig xi, std::uint64_t seed, CouplingPolicy policy)
    : params_(params),
      consts_(CouplingConstants::compute(params.a, params.b, params.n)),
      policy_(policy),
      a_(params, std::move(eta), Rng(seed, {'A'})),
      b_(params, std::move(xi), Rng(seed, {'B'})) {
    if (a_.config() == b_.config()) {
        phase_ = CouplingPhase::Merged;
        merge_time_ = 0;
        return;
    }
    const std::size_t n = params_.n;
    if (in_class_E(a_.config(), n - 1) && in_class_E(b_.config(), n - 1)) {
        mirrored_ = false;
        enter_contraction();
    } else if (in_class_E(a_.config(), 0) && in_class_E(b_.config(), 0)) {
        mirrored_ = true;
        enter_contraction();
    }
}

std::size_t Coupling::to_chain(std::size_t frame_site) const {
    return mirrored_ ? params_.n - 1 - frame_site : frame_site;
}

ChainConfig Coupling::frame(const ChainConfig& c) const {
    if (!mirrored_) return c;
    return ChainConfig(std::vector<double>(c.heights.rbegin(), c.heights.rend()));
}

std::pair<StepRecord, StepRecord> Coupling::apply(std::size_t frame_site, double amount_a, double amount_b) {
    const std::size_t site = to_chain(frame_site);
    auto ra = a_.step_with(site, amount_a);
    auto rb = b_.step_with(site, amount_b);
    last_ = {ra.event, rb.event};
    return {std::move(ra), std::move(rb)};
}

void Coupling::step() {
    ++t_;
    ++phase_times_[static_cast<std::size_t>(phase_)];
    switch (phase_) {
        case CouplingPhase::Independent: step_independent(); break;
        case CouplingPhase::Contraction: step_contraction(); break;
        case CouplingPhase::Merging: step_merging(); break;
        case CouplingPhase::Merged: step_merged(); break;
    }
}

void Coupling::restart() {
    ++restarts_;
    phase_ = CouplingPhase::Independent;
}

void Coupling::step_independent() {
    const auto ra = a_.step();
    const auto rb = b_.step();
    last_ = {ra.event, rb.event};
    const std::size_t n = params_.n;
    if (in_class_E(a_.config(), n - 1) && in_class_E(b_.config(), n - 1)) {
        mirrored_ = false;
        enter_contraction();
    } else if (in_class_E(a_.config(), 0) && in_class_E(b_.config(), 0)) {
        mirrored_ = true;
        enter_contraction();
    }
}

void Coupling::enter_contraction() {
    phase_ = CouplingPhase::Contraction;
    stage_steps_ = 0;
    stage_avalanches_ = 0;
    target_ = params_.n - 1;
    check_contraction_exit();
}

void Coupling::check_contraction_exit() {
    const std::size_t n = params_.n;
    const auto fa = frame(a_.config());
    const auto fb = frame(b_.config());
    if (in_class_E(fa, n - 1) && in_class_E(fb, n - 1) && max_abs_difference(fa, fb) < consts_.eps1) enter_merging();
}

void Coupling::step_contraction() {
    const std::size_t n = params_.n;
    const std::size_t s = a_.rng().index(n);
    const double u = a_.rng().uniform(params_.a, params_.b);
    const bool ok = policy_ == CouplingPolicy::Windowed || (params_.is_heavy(u) && s == target_);
    const auto [ra, rb] = apply(s, u, u);
    ++stage_steps_;
    if (ra.log.total() > 0) {
        ++stage_avalanches_;
        target_ = (target_ == n - 1) ? 0 : n - 1;
    }
    if (!ok) {
        restart();
        return;
    }
    check_contraction_exit();
    if (phase_ != CouplingPhase::Contraction) return;
    if (stage_steps_ >= consts_.t_eps || stage_avalanches_ > consts_.k_eps) restart();
}

void Coupling::enter_merging() {
    phase_ = CouplingPhase::Merging;
    merge_k_ = 1;
    stage_steps_ = 0;
    ++merging_entries_;
}

void Coupling::step_merging() {
    const std::size_t n = params_.n;
    const std::size_t k = merge_k_;
    if (k < 1 || k > n - 1) throw CouplingInconsistency("merging avalanche index outside 1..N-1");

    const double a = params_.a;
    const double b = params_.b;
    const double eps_k = consts_.eps_schedule[k - 1];
    const double mid = 0.5 * (a + b);
    const double a_prime = mid + 3.0 * eps_k;

    const auto fa = frame(a_.config());
    const auto fb = frame(b_.config());
    const bool trigger = std::max(fa[0], fb[0]) > 1.0 - mid - 2.0 * eps_k;

    const std::size_t s = a_.rng().index(n);
    const double u = a_.rng().uniform(a, b);
    double u_b = u;
    if (trigger) {
        std::vector<double> diff(n);
        for (std::size_t y = 0; y < n; ++y) diff[y] = fa[y] - fb[y];
        u_b = coupled_amount(u, correction_D(diff, k, n), a, b);
    }
    const bool ok = s == 0 && (trigger ? (u >= 0.25 * (3.0 * a_prime + b) && u <= 0.25 * (a_prime + 3.0 * b))
                                       : (u >= mid && u <= mid + 2.0 * eps_k));
    const auto [ra, rb] = apply(s, u, u_b);
    ++stage_steps_;
    if (!ok) {
        restart();
        return;
    }

    const bool toppled_a = ra.log.total() > 0;
    const bool toppled_b = rb.log.total() > 0;
    if (!trigger) {
        // A site-1 height landing exactly on 1 is the only way to get here.
        if (toppled_a || toppled_b) restart();
        return;
    }
    if (!(toppled_a && toppled_b)) throw CouplingInconsistency("merging avalanche did not occur in both chains");

    const auto ga = frame(a_.config());
    const auto gb = frame(b_.config());
    for (std::size_t y = n - k; y < n; ++y)
        if (std::abs(ga[y] - gb[y]) > 1e-9)
            throw CouplingInconsistency("merging avalanche " + std::to_string(k) + " left site " +
                                        std::to_string(y + 1) + " unequal");
    if (k == n - 1) {
        b_.set_config(a_.config());
        phase_ = CouplingPhase::Merged;
        merge_time_ = t_;
        merging_steps_ = stage_steps_;
        merging_avalanches_ = k;
    } else {
        ++merge_k_;
    }
}

void Coupling::step_merged() {
    const std::size_t s = a_.rng().index(params_.n);
    const double u = a_.rng().uniform(params_.a, params_.b);
    apply(s, u, u);
}

CouplingResult run_coupling(const ChainParams& params, const ChainConfig& eta, const ChainConfig& xi,
                            std::uint64_t seed, std::uint64_t max_steps, CouplingPolicy policy) {
    Coupling c(params, eta, xi, seed, policy);
    while (c.phase() != CouplingPhase::Merged && c.time() < max_steps) c.step();
    CouplingResult r;
    r.seed = seed;
    r.merged = c.phase() == CouplingPhase::Merged;
    r.merge_time = c.merge_time();
    r.restarts = c.restarts();
    r.phase_times = c.phase_times();
    r.merging_entries = c.merging_entries();
    r.merging_steps = c.merging_steps();
    r.merging_avalanches = c.merging_avalanches();
    return r;
}

void write_coupling_jsonl(std::ostream& out, const CouplingResult& r) {
    out << "{\"seed\":" << r.seed << ",\"merged\":" << (r.merged ? "true" : "false") << ",\"merge_time\":";
    if (r.merge_time) out << *r.merge_time; else out << "null";
    out << ",\"restarts\":" << r.restarts << ",\"phase_times\":[" << r.phase_times[0] << ',' << r.phase_times[1]
        << ',' << r.phase_times[2] << ',' << r.phase_times[3] << "]}\n";
}

}  // namespace zhang
