#ifndef ZHANG_LATTICE_HPP
#define ZHANG_LATTICE_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zhang/rng.hpp"

namespace zhang {

// ++ Geometry ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++

enum class Boundary { Torus, DissipativeBox };

std::string_view to_string(Boundary boundary);
Boundary parse_boundary(std::string_view name);

inline constexpr std::size_t kNoSite = std::numeric_limits<std::size_t>::max();

/// Finite d-dimensional box of sites, row-major with the last coordinate
/// fastest. Each site has 2d neighbor slots ordered (-e_0, +e_0, -e_1, +e_1, ...);
/// in box mode a slot past the edge holds kNoSite and the share sent there
/// leaves the system.
class Geometry {
public:
    Geometry(std::vector<std::size_t> sides, Boundary boundary);

    [[nodiscard]] std::size_t dim() const { return sides_.size(); }
    [[nodiscard]] std::size_t degree() const { return 2 * sides_.size(); }
    [[nodiscard]] std::size_t size() const { return size_; }
    [[nodiscard]] const std::vector<std::size_t>& sides() const { return sides_; }
    [[nodiscard]] Boundary boundary() const { return boundary_; }

    [[nodiscard]] std::span<const std::size_t> neighbors(std::size_t x) const {
        return {table_.data() + x * degree(), degree()};
    }
    [[nodiscard]] std::vector<std::size_t> coords(std::size_t x) const;
    [[nodiscard]] std::size_t index(std::span<const std::size_t> coords) const;
    /// Sum of coordinates mod 2.
    [[nodiscard]] unsigned parity(std::size_t x) const;

    /// "torus:32x32" / "box:64"
    [[nodiscard]] std::string describe() const;

    bool operator==(const Geometry& other) const {
        return sides_ == other.sides_ && boundary_ == other.boundary_;
    }

private:
    std::vector<std::size_t> sides_;
    Boundary boundary_;
    std::size_t size_ = 1;
    std::vector<std::size_t> table_;
};

using GeometryPtr = std::shared_ptr<const Geometry>;

GeometryPtr make_geometry(std::vector<std::size_t> sides, Boundary boundary);

struct LatticeConfig {
    GeometryPtr geometry;
    std::vector<double> heights;

    LatticeConfig() = default;
    explicit LatticeConfig(GeometryPtr g) : geometry(std::move(g)), heights(geometry->size(), 0.0) {}
    LatticeConfig(GeometryPtr g, std::vector<double> h);

    [[nodiscard]] std::size_t size() const { return heights.size(); }
    [[nodiscard]] double total() const;
    [[nodiscard]] std::size_t unstable_count() const;
    [[nodiscard]] bool is_stable() const { return unstable_count() == 0; }
};

/// Per-site toppling counts M(x), emitted mass L(x), boundary losses and clock.
struct MassLedger {
    std::vector<std::uint64_t> topplings;
    std::vector<double> emitted;
    double dissipated = 0.0;
    double t = 0.0;
    std::uint64_t events = 0;
    std::uint64_t total_topplings = 0;

    MassLedger() = default;
    explicit MassLedger(std::size_t sites) : topplings(sites, 0), emitted(sites, 0.0) {}
};

/// Zhang toppling of site x: each of the 2d neighbor slots receives h / (2d),
/// x is emptied, M(x) += 1 and L(x) += h. Stable sites are left alone.
/// Returns whether a toppling happened. Throws std::out_of_range for bad x.
bool topple_lattice(LatticeConfig& config, std::size_t x, MassLedger& ledger);

// ++ Event engine ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++

/// Exact set of unstable sites with O(1) insert, erase and membership.
class UnstableIndex {
public:
    explicit UnstableIndex(const LatticeConfig& config);
    void refresh(const LatticeConfig& config, std::size_t x);
    [[nodiscard]] bool empty() const { return members_.empty(); }
    [[nodiscard]] std::size_t size() const { return members_.size(); }
    [[nodiscard]] bool contains(std::size_t x) const { return pos_[x] != kNoSite; }

private:
    std::vector<std::size_t> members_;
    std::vector<std::size_t> pos_;
};

/// Superposition of independent rate-1 clocks on `sites` sites: the next ring
/// comes after an Exp(sites) time at a uniformly chosen site.
class PoissonSchedule {
public:
    struct Ring {
        double dt;
        std::size_t site;
    };

    explicit PoissonSchedule(std::size_t sites) : sites_(sites) {}
    Ring next(Rng& rng) {
        ++count_;
        const double dt = rng.exponential(static_cast<double>(sites_));
        return {dt, rng.index(sites_)};
    }
    [[nodiscard]] std::uint64_t count() const { return count_; }

private:
    std::size_t sites_;
    std::uint64_t count_ = 0;
};

struct Snapshot {
    double t = 0.0;
    std::uint64_t events = 0;
    double total_mass = 0.0;
    double fraction_unstable = 0.0;
    std::uint64_t min_M = 0;
    std::uint64_t max_M = 0;
};

enum class Outcome { Stabilized, ActiveAtCutoff, Inconclusive };

std::string_view to_string(Outcome outcome);

struct StabilizabilityVerdict {
    Outcome outcome = Outcome::Inconclusive;
    double t_stab = 0.0;  ///< time of the last toppling (stabilized only)
    std::uint64_t min_M = 0;
    std::uint64_t max_M = 0;
    double dissipated = 0.0;
    double min_M_slope = 0.0;  ///< least-squares slope of min M(x, t) over the snapshot trace
    std::uint64_t events = 0;
    std::uint64_t topplings = 0;
    std::vector<Snapshot> trace;
};

struct MarkovOptions {
    double t_max = 100.0;
    double snapshot_every = 1.0;
    /// Active-at-cutoff additionally requires every site to have toppled this often.
    std::uint64_t min_m_threshold = 10;
    /// Stop after this many clock rings (0: no limit).
    std::uint64_t max_events = 0;
    /// Called with the state at each snapshot time.
    std::function<void(const LatticeConfig&, const MassLedger&, const Snapshot&)> on_snapshot;
};

/// Markov toppling process: every site carries a rate-1 Poisson clock and
/// topples at a ring if unstable. Runs from ledger.t until t_max, until no
/// unstable site remains, or until max_events rings.
StabilizabilityVerdict markov_run(LatticeConfig& config, MassLedger& ledger, Rng& rng, const MarkovOptions& options);

// ++ Parallel rounds, conservation, bonds ++++++++++++++++++++++++++++++++++

/// All sites unstable at the start of the round topple simultaneously with
/// their round-start heights. Updates `ledger` when given.
LatticeConfig parallel_round(const LatticeConfig& config, MassLedger* ledger = nullptr);

struct MassIdentityReport {
    double site_residual = 0.0;     ///< max_x |eta_x(t) - eta_x + L(x) - (1/2d) sum_{y~x} L(y)|
    double matrix_residual = 0.0;   ///< max_x |(eta(t) - eta(0) - Delta L)_x|, Delta built from coordinates
    double balance_residual = 0.0;  ///< |total(t) - total(0) + dissipated|

    [[nodiscard]] double max() const;
};

/// Throws std::invalid_argument when the two configurations have different geometry.
MassIdentityReport mass_identity_check(const LatticeConfig& initial, const LatticeConfig& current,
                                       const MassLedger& ledger);

/// Sites of an axis-aligned box with lower corner `origin` and side lengths
/// `extent`; wraps on the torus, throws std::out_of_range if it leaves a box lattice.
std::vector<std::size_t> box_region(const Geometry& geometry, std::span<const std::size_t> origin,
                                    std::span<const std::size_t> extent);

/// Lattice edges with both endpoints in `region`.
std::size_t count_internal_bonds(const Geometry& geometry, std::span<const std::size_t> region);

struct BondCheck {
    bool precondition = false;  ///< every site of the region has toppled
    std::size_t bonds = 0;
    double mass = 0.0;
    double bound = 0.0;  ///< bonds / (2d)
    bool holds = false;  ///< mass >= bound (only meaningful with the precondition)
};

BondCheck bond_bound_check(const LatticeConfig& config, std::span<const std::size_t> region, const MassLedger& ledger);

// ++ Initial measures and experiments ++++++++++++++++++++++++++++++++++++++

enum class DensityKind { IidUniform, Constant, Checkerboard, NearFull };

std::string_view to_string(DensityKind kind);
DensityKind parse_density_kind(std::string_view name);

struct DensitySpec {
    DensityKind kind = DensityKind::IidUniform;
    double rho = 0.0;

    /// "iid(0.4)"
    [[nodiscard]] std::string describe() const;
};

/// iid-uniform: heights iid on [0, 2 rho].
/// constant:    every height rho.
/// checkerboard: 2 rho on one parity class, 0 on the other; the class is a fair coin.
/// near-full:   with L = 1 - 1/(2d), heights iid equal to 1 with probability
///              (rho - L) / (1 - L) and to L otherwise; needs L < rho < 1.
/// Throws std::invalid_argument on incompatible parameters or geometry.
LatticeConfig generate(const DensitySpec& spec, const GeometryPtr& geometry, Rng& rng);

struct ReplicaResult {
    std::size_t replica = 0;
    StabilizabilityVerdict verdict;
    MassIdentityReport conservation;
    LatticeConfig final_config;
};

struct ExperimentSummary {
    std::vector<ReplicaResult> replicas;
    double fraction_stabilized = 0.0;
    double median_t_stab = 0.0;       ///< over stabilized replicas (0 if none)
    double mean_active_slope = 0.0;   ///< mean min-M slope over active replicas (0 if none)
    double max_conservation_residual = 0.0;
};

/// Replica r draws its initial configuration from Rng(seed, {r, 1}) and its
/// clocks from Rng(seed, {r, 2}); replicas run in parallel, results are in
/// replica order. The mass identity is checked at every snapshot and the
/// worst residuals are kept; options.on_snapshot, if set, is called
/// concurrently from several threads.
ExperimentSummary stabilizability_experiment(const DensitySpec& spec, const GeometryPtr& geometry,
                                             const MarkovOptions& options, std::size_t replicas, std::uint64_t seed);

/// Heights as CSV (one per line, row-major) after a "# {json}" header with
/// dim, sides, boundary, t and seed.
void write_snapshot_csv(std::ostream& out, const LatticeConfig& config, double t, std::uint64_t seed);

// ++ Kernels with serial references ++++++++++++++++++++++++++++++++++++++++

namespace kernels {

/// Gather form, OpenMP over sites: out_x = [h_x < 1] h_x + (1/2d) sum_{y~x, h_y >= 1} h_y.
void parallel_round_omp(const LatticeConfig& in, LatticeConfig& out, MassLedger* ledger);
/// Scatter form, single thread.
void parallel_round_serial(const LatticeConfig& in, LatticeConfig& out, MassLedger* ledger);

double total_mass_omp(std::span<const double> heights);
double total_mass_serial(std::span<const double> heights);

std::size_t unstable_count_omp(std::span<const double> heights);

struct Extremes {
    std::uint64_t min = 0;
    std::uint64_t max = 0;
};
Extremes toppling_extremes_omp(std::span<const std::uint64_t> counts);
Extremes toppling_extremes_serial(std::span<const std::uint64_t> counts);

/// Per-site mass identity residual through the neighbor table.
double site_identity_residual_omp(const LatticeConfig& initial, const LatticeConfig& current, const MassLedger& ledger);
double site_identity_residual_serial(const LatticeConfig& initial, const LatticeConfig& current,
                                     const MassLedger& ledger);

}  // namespace kernels

}  // namespace zhang

#endif
