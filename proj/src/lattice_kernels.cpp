#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "zhang/lattice.hpp"

namespace zhang::kernels {

namespace {

void check_round_shapes(const LatticeConfig& in, LatticeConfig& out, MassLedger* ledger) {
    if (!in.geometry) throw std::invalid_argument("parallel round: configuration has no geometry");
    if (!out.geometry || !(*out.geometry == *in.geometry)) out = LatticeConfig(in.geometry);
    if (ledger && (ledger->topplings.size() != in.size() || ledger->emitted.size() != in.size()))
        throw std::invalid_argument("parallel round: ledger does not match lattice");
}

// Pairwise sum of p[lo, hi).
double pairwise(const double* p, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return p[lo];
    const std::size_t mid = lo + (hi - lo) / 2;
    return pairwise(p, lo, mid) + pairwise(p, mid, hi);
}

// Fixed chunking so the result does not depend on the thread count.
constexpr std::size_t kChunk = 4096;

}  // namespace

void parallel_round_omp(const LatticeConfig& in, LatticeConfig& out, MassLedger* ledger) {
    check_round_shapes(in, out, ledger);
    const Geometry& g = *in.geometry;
    const std::size_t n = g.size();
    const std::size_t d = g.dim();
    const double deg = static_cast<double>(g.degree());
    const double* h = in.heights.data();
    double* o = out.heights.data();
    double lost = 0.0;
    std::uint64_t toppled = 0;

#pragma omp parallel reduction(+ : lost, toppled)
    {
        std::vector<double> pairs(d);
#pragma omp for schedule(static)
        for (std::size_t x = 0; x < n; ++x) {
            const auto nbrs = g.neighbors(x);
            for (std::size_t k = 0; k < d; ++k) {
                double pk = 0.0;
                for (std::size_t s = 0; s < 2; ++s) {
                    const std::size_t y = nbrs[2 * k + s];
                    if (y != kNoSite && h[y] >= 1.0) pk += h[y];
                }
                pairs[k] = pk;
            }
            const double hx = h[x];
            const bool fires = hx >= 1.0;
            o[x] = (fires ? 0.0 : hx) + pairwise(pairs.data(), 0, d) / deg;
            if (fires) {
                ++toppled;
                std::size_t missing = 0;
                for (auto y : nbrs) missing += y == kNoSite;
                if (missing) lost += hx * static_cast<double>(missing) / deg;
                if (ledger) {
                    ++ledger->topplings[x];
                    ledger->emitted[x] += hx;
                }
            }
        }
    }
    if (ledger) {
        ledger->dissipated += lost;
        ledger->total_topplings += toppled;
    }
}

void parallel_round_serial(const LatticeConfig& in, LatticeConfig& out, MassLedger* ledger) {
    check_round_shapes(in, out, ledger);
    const Geometry& g = *in.geometry;
    const double deg = static_cast<double>(g.degree());
    out.heights = in.heights;
    for (std::size_t x = 0; x < in.size(); ++x)
        if (in.heights[x] >= 1.0) out.heights[x] = 0.0;
    for (std::size_t x = 0; x < in.size(); ++x) {
        const double hx = in.heights[x];
        if (hx < 1.0) continue;
        const double share = hx / deg;
        for (auto y : g.neighbors(x)) {
            if (y == kNoSite) {
                if (ledger) ledger->dissipated += share;
            } else {
                out.heights[y] += share;
            }
        }
        if (ledger) {
            ++ledger->topplings[x];
            ledger->emitted[x] += hx;
            ++ledger->total_topplings;
        }
    }
}

double total_mass_omp(std::span<const double> heights) {
    const std::size_t chunks = (heights.size() + kChunk - 1) / kChunk;
    if (chunks <= 1) return total_mass_serial(heights);
    std::vector<double> partial(chunks, 0.0);
#pragma omp parallel for schedule(static)
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t end = std::min(heights.size(), (c + 1) * kChunk);
        double s = 0.0;
        for (std::size_t i = c * kChunk; i < end; ++i) s += heights[i];
        partial[c] = s;
    }
    double s = 0.0;
    for (double p : partial) s += p;
    return s;
}

double total_mass_serial(std::span<const double> heights) {
    double s = 0.0;
    for (double h : heights) s += h;
    return s;
}

std::size_t unstable_count_omp(std::span<const double> heights) {
    std::size_t count = 0;
    const std::size_t n = heights.size();
#pragma omp parallel for reduction(+ : count) schedule(static) if (n >= kChunk)
    for (std::size_t i = 0; i < n; ++i) count += heights[i] >= 1.0;
    return count;
}

Extremes toppling_extremes_omp(std::span<const std::uint64_t> counts) {
    if (counts.empty()) return {};
    std::uint64_t lo = counts[0], hi = counts[0];
    const std::size_t n = counts.size();
#pragma omp parallel for reduction(min : lo) reduction(max : hi) schedule(static) if (n >= kChunk)
    for (std::size_t i = 0; i < n; ++i) {
        lo = std::min(lo, counts[i]);
        hi = std::max(hi, counts[i]);
    }
    return {lo, hi};
}

Extremes toppling_extremes_serial(std::span<const std::uint64_t> counts) {
    if (counts.empty()) return {};
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    return {*lo, *hi};
}

double site_identity_residual_omp(const LatticeConfig& initial, const LatticeConfig& current,
                                  const MassLedger& ledger) {
    const Geometry& g = *current.geometry;
    const double deg = static_cast<double>(g.degree());
    const std::size_t n = g.size();
    double worst = 0.0;
#pragma omp parallel for reduction(max : worst) schedule(static)
    for (std::size_t x = 0; x < n; ++x) {
        double in = 0.0;
        for (auto y : g.neighbors(x))
            if (y != kNoSite) in += ledger.emitted[y];
        const double r = current.heights[x] - initial.heights[x] + ledger.emitted[x] - in / deg;
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

double site_identity_residual_serial(const LatticeConfig& initial, const LatticeConfig& current,
                                     const MassLedger& ledger) {
    const Geometry& g = *current.geometry;
    const double deg = static_cast<double>(g.degree());
    double worst = 0.0;
    for (std::size_t x = 0; x < g.size(); ++x) {
        double in = 0.0;
        for (auto y : g.neighbors(x))
            if (y != kNoSite) in += ledger.emitted[y];
        worst = std::max(worst, std::abs(current.heights[x] - initial.heights[x] + ledger.emitted[x] - in / deg));
    }
    return worst;
}

}  // namespace zhang::kernels
