#ifndef ZHANG_CORE_HPP
#define ZHANG_CORE_HPP

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "zhang/rng.hpp"

namespace zhang {

/// Height at which a site becomes unstable.
inline constexpr double kThreshold = 1.0;

/// Default cap on topplings in one stabilization call.
inline constexpr std::uint64_t kDefaultToppleCap = 10'000'000;

enum class SiteLabel { Empty, Anomalous, Full, Unstable };

std::string_view to_string(SiteLabel label);

/// Label of a height: empty (0), anomalous (0, 1/2), full [1/2, 1), unstable [1, inf).
/// Throws std::invalid_argument for negative or NaN heights.
SiteLabel classify_site(double h);

inline bool is_unstable(double h) { return h >= kThreshold; }

/// Finite chain configuration. Sites are addressed 0..N-1 in code; site 0 is
/// the left boundary and site N-1 the right boundary.
struct ChainConfig {
    std::vector<double> heights;

    ChainConfig() = default;
    explicit ChainConfig(std::vector<double> h) : heights(std::move(h)) {}
    ChainConfig(std::initializer_list<double> h) : heights(h) {}

    [[nodiscard]] std::size_t size() const { return heights.size(); }
    double& operator[](std::size_t x) { return heights[x]; }
    double operator[](std::size_t x) const { return heights[x]; }

    [[nodiscard]] double total() const;
    [[nodiscard]] bool is_stable() const;

    bool operator==(const ChainConfig&) const = default;
};

/// Largest |a_x - b_x|; configs must have equal length.
double max_abs_difference(const ChainConfig& a, const ChainConfig& b);

/// Zhang toppling of site x in place. Returns the mass that left the chain
/// (nonzero only for a boundary site). A stable site is left untouched.
/// Throws std::out_of_range for x >= N.
double topple_site(ChainConfig& config, std::size_t x);

/// Value-returning form of topple_site.
ChainConfig topple_chain(ChainConfig config, std::size_t x);

enum class TopplingPolicy { LeftmostFirst, RightmostFirst, ParallelRounds, UniformRandom };

std::string_view to_string(TopplingPolicy policy);
TopplingPolicy parse_policy(std::string_view name);

struct TopplingLog {
    std::vector<std::uint64_t> counts;
    /// Sites in toppling order (sequential policies).
    std::vector<std::size_t> sequence;
    /// Sites toppled in each round (parallel-rounds only).
    std::vector<std::vector<std::size_t>> rounds;
    double dissipated = 0.0;

    [[nodiscard]] std::uint64_t total() const;
};

struct Stabilized {
    ChainConfig config;
    TopplingLog log;
};

class ToppleCapExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Topple until stable. `rng` is required for UniformRandom and ignored
/// otherwise. Throws ToppleCapExceeded after `cap` topplings.
Stabilized stabilize_chain(ChainConfig config, TopplingPolicy policy, Rng* rng = nullptr,
                           std::uint64_t cap = kDefaultToppleCap);

/// In-place variant used on hot paths; appends to `log` (which must be sized N).
void stabilize_in_place(ChainConfig& config, TopplingPolicy policy, TopplingLog& log, Rng* rng = nullptr,
                        std::uint64_t cap = kDefaultToppleCap);

/// Configuration empty at x and full everywhere else.
bool in_class_E(const ChainConfig& config, std::size_t x);

/// Empty at exactly one boundary site and full elsewhere.
bool in_E_b(const ChainConfig& config);

}  // namespace zhang

#endif
