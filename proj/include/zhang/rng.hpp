#ifndef ZHANG_RNG_HPP
#define ZHANG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace zhang {

/// Seedable, splittable random stream.
///
/// The engine is std::mt19937_64. A stream is identified by a root seed and a
/// path of 64-bit labels; its engine is seeded through std::seed_seq over the
/// 32-bit halves of (seed, path...). Two streams with different paths are
/// statistically independent, and a stream is reproducible from (seed, path)
/// alone, so replicas and chains can be run in any order or on any thread.
///
/// Conventional paths used across the library:
///   {seed}                      top-level run stream
///   {seed, replica}             replica r of a sweep / experiment
///   {seed, replica, 'A' | 'B'}  the two chains of a coupling run
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) : Rng(seed, {}) {}

    Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) : seed_{seed}, path_(path) {
        reseed_from_path();
    }

    /// Child stream whose path extends this one by `label`.
    [[nodiscard]] Rng split(std::uint64_t label) const {
        Rng child(seed_);
        child.path_ = path_;
        child.path_.push_back(label);
        child.reseed_from_path();
        return child;
    }

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on [lo, hi].
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform on {0, ..., n-1}; unbiased (Lemire's multiply-shift with rejection).
    std::size_t index(std::size_t n) {
        const std::uint64_t range = n;
        std::uint64_t x = engine_();
        __uint128_t m = static_cast<__uint128_t>(x) * range;
        auto low = static_cast<std::uint64_t>(m);
        if (low < range) {
            const std::uint64_t threshold = (0 - range) % range;
            while (low < threshold) {
                x = engine_();
                m = static_cast<__uint128_t>(x) * range;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::size_t>(m >> 64);
    }

    /// Exponential with the given rate.
    double exponential(double rate) { return -std::log1p(-uniform01()) / rate; }

    bool bernoulli(double p) { return uniform01() < p; }

    [[nodiscard]] std::uint64_t seed() const { return seed_; }

private:
    void reseed_from_path() {
        std::vector<std::uint32_t> material;
        auto push = [&](std::uint64_t v) {
            material.push_back(static_cast<std::uint32_t>(v));
            material.push_back(static_cast<std::uint32_t>(v >> 32));
        };
        push(seed_);
        for (auto p : path_) push(p);
        std::seed_seq seq(material.begin(), material.end());
        engine_.seed(seq);
    }

    std::uint64_t seed_;
    std::vector<std::uint64_t> path_;
    std::mt19937_64 engine_;
};

}  // namespace zhang

#endif
