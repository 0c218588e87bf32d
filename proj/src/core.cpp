#include "zhang/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace zhang {

std::string_view to_string(SiteLabel label) {
    switch (label) {
        case SiteLabel::Empty: return "empty";
        case SiteLabel::Anomalous: return "anomalous";
        case SiteLabel::Full: return "full";
        case SiteLabel::Unstable: return "unstable";
    }
    return "?";
}

SiteLabel classify_site(double h) {
    if (!(h >= 0.0)) throw std::invalid_argument("classify_site: negative or NaN height");
    if (h == 0.0) return SiteLabel::Empty;
    if (h < 0.5) return SiteLabel::Anomalous;
    if (h < kThreshold) return SiteLabel::Full;
    return SiteLabel::Unstable;
}

double ChainConfig::total() const { return std::accumulate(heights.begin(), heights.end(), 0.0); }

bool ChainConfig::is_stable() const {
    return std::none_of(heights.begin(), heights.end(), [](double h) { return is_unstable(h); });
}

double max_abs_difference(const ChainConfig& a, const ChainConfig& b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_abs_difference: length mismatch");
    double m = 0.0;
    for (std::size_t x = 0; x < a.size(); ++x) m = std::max(m, std::abs(a[x] - b[x]));
    return m;
}

double topple_site(ChainConfig& config, std::size_t x) {
    const std::size_t n = config.size();
    if (x >= n) throw std::out_of_range("topple_site: site " + std::to_string(x) + " outside chain");
    const double h = config[x];
    if (!is_unstable(h)) return 0.0;
    const double share = h / 2.0;
    double lost = 0.0;
    config[x] = 0.0;
    if (x > 0) config[x - 1] += share; else lost += share;
    if (x + 1 < n) config[x + 1] += share; else lost += share;
    return lost;
}

ChainConfig topple_chain(ChainConfig config, std::size_t x) {
    topple_site(config, x);
    return config;
}

std::string_view to_string(TopplingPolicy policy) {
    switch (policy) {
        case TopplingPolicy::LeftmostFirst: return "left";
        case TopplingPolicy::RightmostFirst: return "right";
        case TopplingPolicy::ParallelRounds: return "parallel";
        case TopplingPolicy::UniformRandom: return "random";
    }
    return "?";
}

TopplingPolicy parse_policy(std::string_view name) {
    if (name == "left" || name == "leftmost-first") return TopplingPolicy::LeftmostFirst;
    if (name == "right" || name == "rightmost-first") return TopplingPolicy::RightmostFirst;
    if (name == "parallel" || name == "parallel-rounds") return TopplingPolicy::ParallelRounds;
    if (name == "random" || name == "uniform-random") return TopplingPolicy::UniformRandom;
    throw std::invalid_argument("unknown toppling policy '" + std::string(name) + "'");
}

std::uint64_t TopplingLog::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

namespace {

// Sorted set of unstable sites; avalanches in a chain keep it tiny.
class UnstableSites {
public:
    explicit UnstableSites(const ChainConfig& c) {
        for (std::size_t x = 0; x < c.size(); ++x)
            if (is_unstable(c[x])) sites_.push_back(x);
    }
    [[nodiscard]] bool empty() const { return sites_.empty(); }
    [[nodiscard]] std::size_t front() const { return sites_.front(); }
    [[nodiscard]] std::size_t back() const { return sites_.back(); }
    [[nodiscard]] std::size_t size() const { return sites_.size(); }
    [[nodiscard]] std::size_t at(std::size_t i) const { return sites_[i]; }
    [[nodiscard]] const std::vector<std::size_t>& all() const { return sites_; }

    void refresh(const ChainConfig& c, std::size_t x) {
        auto it = std::lower_bound(sites_.begin(), sites_.end(), x);
        const bool present = it != sites_.end() && *it == x;
        const bool unstable = is_unstable(c[x]);
        if (unstable && !present) sites_.insert(it, x);
        else if (!unstable && present) sites_.erase(it);
    }

    void rebuild(const ChainConfig& c) { *this = UnstableSites(c); }

private:
    std::vector<std::size_t> sites_;
};

void check_cap(std::uint64_t done, std::uint64_t cap) {
    if (done > cap)
        throw ToppleCapExceeded("stabilization exceeded " + std::to_string(cap) + " topplings");
}

}  // namespace

void stabilize_in_place(ChainConfig& config, TopplingPolicy policy, TopplingLog& log, Rng* rng,
                        std::uint64_t cap) {
    const std::size_t n = config.size();
    if (log.counts.size() != n) log.counts.assign(n, 0);
    if (policy == TopplingPolicy::UniformRandom && rng == nullptr)
        throw std::invalid_argument("stabilize: uniform-random policy needs an rng");

    UnstableSites unstable(config);
    std::uint64_t done = 0;

    if (policy == TopplingPolicy::ParallelRounds) {
        std::vector<double> start;
        while (!unstable.empty()) {
            const auto& round = unstable.all();
            start.clear();
            for (auto x : round) start.push_back(config[x]);
            for (auto x : round) config[x] = 0.0;
            for (std::size_t i = 0; i < round.size(); ++i) {
                const std::size_t x = round[i];
                const double share = start[i] / 2.0;
                if (x > 0) config[x - 1] += share; else log.dissipated += share;
                if (x + 1 < n) config[x + 1] += share; else log.dissipated += share;
                ++log.counts[x];
            }
            done += round.size();
            log.rounds.push_back(round);
            check_cap(done, cap);
            unstable.rebuild(config);
        }
        return;
    }

    while (!unstable.empty()) {
        std::size_t x = 0;
        switch (policy) {
            case TopplingPolicy::LeftmostFirst: x = unstable.front(); break;
            case TopplingPolicy::RightmostFirst: x = unstable.back(); break;
            case TopplingPolicy::UniformRandom: x = unstable.at(rng->index(unstable.size())); break;
            case TopplingPolicy::ParallelRounds: break;
        }
        log.dissipated += topple_site(config, x);
        ++log.counts[x];
        log.sequence.push_back(x);
        check_cap(++done, cap);
        unstable.refresh(config, x);
        if (x > 0) unstable.refresh(config, x - 1);
        if (x + 1 < n) unstable.refresh(config, x + 1);
    }
}

Stabilized stabilize_chain(ChainConfig config, TopplingPolicy policy, Rng* rng, std::uint64_t cap) {
    Stabilized out;
    out.log.counts.assign(config.size(), 0);
    stabilize_in_place(config, policy, out.log, rng, cap);
    out.config = std::move(config);
    return out;
}

bool in_class_E(const ChainConfig& config, std::size_t x) {
    if (x >= config.size()) throw std::out_of_range("in_class_E: site outside chain");
    for (std::size_t y = 0; y < config.size(); ++y) {
        const auto label = classify_site(config[y]);
        if (y == x ? label != SiteLabel::Empty : label != SiteLabel::Full) return false;
    }
    return true;
}

bool in_E_b(const ChainConfig& config) {
    if (config.size() == 0) return false;
    return in_class_E(config, 0) || in_class_E(config, config.size() - 1);
}

}  // namespace zhang
