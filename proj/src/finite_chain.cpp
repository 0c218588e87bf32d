#include "zhang/finite_chain.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "zhang/format.hpp"

namespace zhang {

void ChainParams::validate() const {
    if (n < 1) throw std::invalid_argument("chain needs at least one site");
    if (!(a >= 0.0 && a < b && b <= 1.0))
        throw std::invalid_argument("addition interval must satisfy 0 <= a < b <= 1");
}

ChainProcess::ChainProcess(ChainParams params, Rng rng)
    : ChainProcess(params, ChainConfig(std::vector<double>(params.n, 0.0)), std::move(rng)) {}

ChainProcess::ChainProcess(ChainParams params, ChainConfig initial, Rng rng)
    : params_(params), config_(std::move(initial)), rng_(std::move(rng)) {
    params_.validate();
    set_config(config_);
}

void ChainProcess::set_config(ChainConfig c) {
    if (c.size() != params_.n) throw std::invalid_argument("initial configuration has wrong length");
    for (double h : c.heights)
        if (!(h >= 0.0)) throw std::invalid_argument("heights must be nonnegative");
    if (!c.is_stable()) throw std::invalid_argument("process state must be a stable configuration");
    config_ = std::move(c);
}

StepRecord ChainProcess::step() {
    const std::size_t site = rng_.index(params_.n);
    const double amount = rng_.uniform(params_.a, params_.b);
    return apply(site, amount);
}

StepRecord ChainProcess::step_with(std::size_t site, double amount) {
    if (site >= params_.n) throw std::invalid_argument("addition site outside chain");
    if (!(amount >= params_.a && amount <= params_.b))
        throw std::invalid_argument("addition amount " + format_real(amount) + " outside [a, b]");
    return apply(site, amount);
}

void ChainProcess::advance(std::uint64_t count) {
    for (std::uint64_t i = 0; i < count; ++i) step();
}

StepRecord ChainProcess::apply(std::size_t site, double amount) {
    StepRecord rec;
    rec.event = {++t_, site, amount};
    rec.log.counts.assign(params_.n, 0);
    config_[site] += amount;
    if (is_unstable(config_[site]))
        stabilize_in_place(config_, TopplingPolicy::LeftmostFirst, rec.log);
    return rec;
}

Trajectory scripted_run(ChainProcess& process, std::span<const AdditionEvent> script) {
    for (const auto& ev : script) {
        const auto& p = process.params();
        if (!(ev.amount >= p.a && ev.amount <= p.b))
            throw std::invalid_argument("scripted amount outside [a, b]");
        if (ev.site >= p.n) throw std::invalid_argument("scripted site outside chain");
    }
    Trajectory traj;
    traj.configs.push_back(process.config());
    for (const auto& ev : script) {
        traj.steps.push_back(process.step_with(ev.site, ev.amount));
        traj.configs.push_back(process.config());
    }
    return traj;
}

MarginalStats::MarginalStats(std::size_t sites, std::size_t bins)
    : bins_(bins), mean_(sites, 0.0), m2_(sites, 0.0), hist_(sites * bins, 0) {
    if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
}

void MarginalStats::record(const ChainConfig& config) {
    if (config.size() != mean_.size()) throw std::invalid_argument("MarginalStats: site count mismatch");
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t x = 0; x < mean_.size(); ++x) {
        const double h = config[x];
        const double delta = h - mean_[x];
        mean_[x] += delta * inv;
        m2_[x] += delta * (h - mean_[x]);
        auto bin = static_cast<std::size_t>(h * static_cast<double>(bins_));
        hist_[x * bins_ + std::min(bin, bins_ - 1)] += 1;
    }
}

void MarginalStats::merge(const MarginalStats& other) {
    if (other.bins_ != bins_ || other.sites() != sites())
        throw std::invalid_argument("MarginalStats: shape mismatch in merge");
    if (other.count_ == 0) return;
    const double n1 = static_cast<double>(count_);
    const double n2 = static_cast<double>(other.count_);
    const double n = n1 + n2;
    for (std::size_t x = 0; x < mean_.size(); ++x) {
        const double delta = other.mean_[x] - mean_[x];
        mean_[x] += delta * n2 / n;
        m2_[x] += other.m2_[x] + delta * delta * n1 * n2 / n;
    }
    for (std::size_t i = 0; i < hist_.size(); ++i) hist_[i] += other.hist_[i];
    count_ += other.count_;
}

double MarginalStats::variance(std::size_t site) const {
    return count_ == 0 ? 0.0 : m2_[site] / static_cast<double>(count_);
}

std::span<const std::uint64_t> MarginalStats::histogram(std::size_t site) const {
    return {hist_.data() + site * bins_, bins_};
}

MarginalStats run_stationary(ChainProcess& process, std::uint64_t burn_in, std::uint64_t samples,
                             std::size_t bins) {
    process.advance(burn_in);
    MarginalStats stats(process.params().n, bins);
    for (std::uint64_t i = 0; i < samples; ++i) {
        process.step();
        stats.record(process.config());
    }
    return stats;
}

double empirical_tv_distance(const MarginalStats& s1, const MarginalStats& s2, std::size_t site) {
    if (s1.bins() != s2.bins() || s1.sites() != s2.sites())
        throw std::invalid_argument("empirical_tv_distance: binning mismatch");
    if (s1.count() == 0 || s2.count() == 0) throw std::invalid_argument("empirical_tv_distance: no samples");
    if (site >= s1.sites()) throw std::out_of_range("empirical_tv_distance: site outside chain");
    const auto h1 = s1.histogram(site);
    const auto h2 = s2.histogram(site);
    const double c1 = static_cast<double>(s1.count());
    const double c2 = static_cast<double>(s2.count());
    double l1 = 0.0;
    for (std::size_t i = 0; i < h1.size(); ++i)
        l1 += std::abs(static_cast<double>(h1[i]) / c1 - static_cast<double>(h2[i]) / c2);
    return std::min(1.0, 0.5 * l1);
}

std::vector<MarginalStats> ensemble_marginals(const ChainParams& params, const ChainConfig& initial,
                                              std::span<const std::uint64_t> times, std::size_t replicas,
                                              std::uint64_t seed, std::size_t bins) {
    params.validate();
    if (!std::is_sorted(times.begin(), times.end()))
        throw std::invalid_argument("ensemble_marginals: times must be nondecreasing");
    const std::size_t nt = times.size();
    // One accumulator per (thread-independent) replica block keeps the merge order fixed.
    constexpr std::size_t kBlock = 256;
    const std::size_t blocks = (replicas + kBlock - 1) / kBlock;
    std::vector<std::vector<MarginalStats>> partial(blocks, std::vector<MarginalStats>(nt, MarginalStats(params.n, bins)));

#pragma omp parallel for schedule(dynamic)
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t end = std::min(replicas, (blk + 1) * kBlock);
        for (std::size_t r = blk * kBlock; r < end; ++r) {
            ChainProcess proc(params, initial, Rng(seed, {r}));
            for (std::size_t i = 0; i < nt; ++i) {
                proc.advance(times[i] - proc.time());
                partial[blk][i].record(proc.config());
            }
        }
    }

    std::vector<MarginalStats> out(nt, MarginalStats(params.n, bins));
    for (const auto& block : partial)
        for (std::size_t i = 0; i < nt; ++i) out[i].merge(block[i]);
    return out;
}

void write_event_jsonl(std::ostream& out, const StepRecord& step) {
    out << "{\"t\":" << step.event.t << ",\"site\":" << step.event.site + 1
        << ",\"amount\":" << format_real(step.event.amount) << ",\"avalanche_size\":" << step.avalanche_size()
        << "}\n";
}

void write_stats_csv_header(std::ostream& out, std::size_t bins) {
    out << "site,mean,var";
    for (std::size_t i = 0; i < bins; ++i) out << ",hist_bin_" << i;
    out << '\n';
}

void write_stats_csv_rows(std::ostream& out, const MarginalStats& stats) {
    if (stats.count() == 0) return;
    for (std::size_t x = 0; x < stats.sites(); ++x) {
        out << x + 1 << ',' << format_real(stats.mean(x)) << ',' << format_real(stats.variance(x));
        for (auto c : stats.histogram(x)) out << ',' << c;
        out << '\n';
    }
}

}  // namespace zhang
