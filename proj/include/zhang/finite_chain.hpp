#ifndef ZHANG_FINITE_CHAIN_HPP
#define ZHANG_FINITE_CHAIN_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "zhang/core.hpp"
#include "zhang/rng.hpp"

namespace zhang {

/// Parameters of the (N, [a, b]) model: N sites, addition amounts uniform on [a, b].
struct ChainParams {
    std::size_t n = 1;
    double a = 0.0;
    double b = 1.0;

    /// Throws std::invalid_argument unless N >= 1 and 0 <= a < b <= 1.
    void validate() const;

    /// Amount of at least (a + b) / 2.
    [[nodiscard]] bool is_heavy(double amount) const { return amount >= 0.5 * (a + b); }
};

/// One addition; `site` is 0-based.
struct AdditionEvent {
    std::uint64_t t = 0;
    std::size_t site = 0;
    double amount = 0.0;
};

struct StepRecord {
    AdditionEvent event;
    TopplingLog log;

    [[nodiscard]] std::uint64_t avalanche_size() const { return log.total(); }
};

/// State of one (N, [a, b]) process run.
class ChainProcess {
public:
    /// Starts from the all-zero configuration.
    ChainProcess(ChainParams params, Rng rng);
    /// Starts from `initial`, which must be stable and of length N.
    ChainProcess(ChainParams params, ChainConfig initial, Rng rng);

    /// One step of the process: uniform site, uniform amount on [a, b], stabilize.
    StepRecord step();

    /// One step with the addition supplied by the caller. Throws
    /// std::invalid_argument if the amount lies outside [a, b] or the site
    /// outside the chain.
    StepRecord step_with(std::size_t site, double amount);

    /// Advance `count` steps without recording logs.
    void advance(std::uint64_t count);

    [[nodiscard]] const ChainConfig& config() const { return config_; }
    [[nodiscard]] const ChainParams& params() const { return params_; }
    [[nodiscard]] std::uint64_t time() const { return t_; }
    Rng& rng() { return rng_; }

    /// Overwrite the configuration (coupling uses this to snap merged chains).
    void set_config(ChainConfig c);

private:
    StepRecord apply(std::size_t site, double amount);

    ChainParams params_;
    ChainConfig config_;
    std::uint64_t t_ = 0;
    Rng rng_;
};

struct Trajectory {
    std::vector<ChainConfig> configs;  ///< initial config followed by one per event
    std::vector<StepRecord> steps;
};

/// Replays `script` in order. Event times in the script are ignored and
/// reassigned by the process clock.
Trajectory scripted_run(ChainProcess& process, std::span<const AdditionEvent> script);

/// Per-site running moments and fixed-width histograms over [0, 1).
class MarginalStats {
public:
    static constexpr std::size_t kDefaultBins = 256;

    MarginalStats() = default;
    MarginalStats(std::size_t sites, std::size_t bins = kDefaultBins);

    void record(const ChainConfig& config);
    /// Merge another accumulator with identical shape.
    void merge(const MarginalStats& other);

    [[nodiscard]] std::size_t sites() const { return mean_.size(); }
    [[nodiscard]] std::size_t bins() const { return bins_; }
    [[nodiscard]] std::uint64_t count() const { return count_; }
    [[nodiscard]] double mean(std::size_t site) const { return mean_[site]; }
    /// Population variance of the recorded samples.
    [[nodiscard]] double variance(std::size_t site) const;
    [[nodiscard]] std::span<const std::uint64_t> histogram(std::size_t site) const;

private:
    std::size_t bins_ = kDefaultBins;
    std::uint64_t count_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
    std::vector<std::uint64_t> hist_;  // sites x bins, row-major
};

/// Advance `burn_in` steps, then record the configuration after each of `samples` steps.
MarginalStats run_stationary(ChainProcess& process, std::uint64_t burn_in, std::uint64_t samples,
                             std::size_t bins = MarginalStats::kDefaultBins);

/// Half the L1 distance between the normalized histograms of `site`.
/// Throws std::invalid_argument on shape mismatch or empty statistics.
double empirical_tv_distance(const MarginalStats& s1, const MarginalStats& s2, std::size_t site);

/// Law of the configuration at fixed times, estimated from independent replicas.
/// Replica r uses stream Rng(seed, {r}); replicas run in parallel. Result i
/// holds the marginals at times[i] (times must be nondecreasing).
std::vector<MarginalStats> ensemble_marginals(const ChainParams& params, const ChainConfig& initial,
                                              std::span<const std::uint64_t> times, std::size_t replicas,
                                              std::uint64_t seed, std::size_t bins = MarginalStats::kDefaultBins);

/// JSON-lines record {"t","site","amount","avalanche_size"}; site is 1-based.
void write_event_jsonl(std::ostream& out, const StepRecord& step);

/// CSV body rows: site,mean,var,hist_bin_0..hist_bin_{B-1}; site is 1-based.
void write_stats_csv_header(std::ostream& out, std::size_t bins);
void write_stats_csv_rows(std::ostream& out, const MarginalStats& stats);

}  // namespace zhang

#endif
