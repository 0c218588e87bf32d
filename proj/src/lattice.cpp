#include "zhang/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "zhang/format.hpp"

namespace zhang {

std::string_view to_string(Boundary boundary) {
    return boundary == Boundary::Torus ? "torus" : "box";
}

Boundary parse_boundary(std::string_view name) {
    if (name == "torus") return Boundary::Torus;
    if (name == "box" || name == "dissipative-box") return Boundary::DissipativeBox;
    throw std::invalid_argument("unknown boundary '" + std::string(name) + "'");
}

Geometry::Geometry(std::vector<std::size_t> sides, Boundary boundary) : sides_(std::move(sides)), boundary_(boundary) {
    if (sides_.empty()) throw std::invalid_argument("lattice needs dimension >= 1");
    for (auto s : sides_) {
        if (s < 1) throw std::invalid_argument("lattice sides must be positive");
        if (boundary_ == Boundary::Torus && s < 2) throw std::invalid_argument("torus sides must be at least 2");
        size_ *= s;
    }
    const std::size_t d = dim();
    std::vector<std::size_t> stride(d, 1);
    for (std::size_t k = d - 1; k-- > 0;) stride[k] = stride[k + 1] * sides_[k + 1];

    table_.assign(size_ * degree(), kNoSite);
    for (std::size_t x = 0; x < size_; ++x) {
        std::size_t rest = x;
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t c = (rest / stride[k]) % sides_[k];
            const std::size_t len = sides_[k];
            std::size_t* slot = &table_[x * degree() + 2 * k];
            if (c > 0) slot[0] = x - stride[k];
            else if (boundary_ == Boundary::Torus) slot[0] = x + (len - 1) * stride[k];
            if (c + 1 < len) slot[1] = x + stride[k];
            else if (boundary_ == Boundary::Torus) slot[1] = x - (len - 1) * stride[k];
        }
    }
}

std::vector<std::size_t> Geometry::coords(std::size_t x) const {
    std::vector<std::size_t> c(dim());
    for (std::size_t k = dim(); k-- > 0;) {
        c[k] = x % sides_[k];
        x /= sides_[k];
    }
    return c;
}

std::size_t Geometry::index(std::span<const std::size_t> c) const {
    if (c.size() != dim()) throw std::invalid_argument("coordinate arity mismatch");
    std::size_t x = 0;
    for (std::size_t k = 0; k < dim(); ++k) {
        if (c[k] >= sides_[k]) throw std::out_of_range("coordinate outside lattice");
        x = x * sides_[k] + c[k];
    }
    return x;
}

unsigned Geometry::parity(std::size_t x) const {
    std::size_t s = 0;
    for (auto c : coords(x)) s += c;
    return static_cast<unsigned>(s % 2);
}

std::string Geometry::describe() const {
    std::string out(to_string(boundary_));
    out += ':';
    for (std::size_t k = 0; k < dim(); ++k) {
        if (k) out += 'x';
        out += std::to_string(sides_[k]);
    }
    return out;
}

GeometryPtr make_geometry(std::vector<std::size_t> sides, Boundary boundary) {
    return std::make_shared<const Geometry>(std::move(sides), boundary);
}

LatticeConfig::LatticeConfig(GeometryPtr g, std::vector<double> h) : geometry(std::move(g)), heights(std::move(h)) {
    if (heights.size() != geometry->size()) throw std::invalid_argument("height array does not match geometry");
    for (double v : heights)
        if (!(v >= 0.0)) throw std::invalid_argument("heights must be nonnegative");
}

double LatticeConfig::total() const { return kernels::total_mass_omp(heights); }

std::size_t LatticeConfig::unstable_count() const { return kernels::unstable_count_omp(heights); }

bool topple_lattice(LatticeConfig& config, std::size_t x, MassLedger& ledger) {
    if (x >= config.size()) throw std::out_of_range("topple_lattice: site outside lattice");
    const double h = config.heights[x];
    if (h < 1.0) return false;
    const auto nbrs = config.geometry->neighbors(x);
    const double share = h / static_cast<double>(nbrs.size());
    config.heights[x] = 0.0;
    for (auto y : nbrs) {
        if (y == kNoSite) ledger.dissipated += share;
        else config.heights[y] += share;
    }
    ++ledger.topplings[x];
    ledger.emitted[x] += h;
    ++ledger.total_topplings;
    return true;
}

// ++ Event engine ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++

UnstableIndex::UnstableIndex(const LatticeConfig& config) : pos_(config.size(), kNoSite) {
    for (std::size_t x = 0; x < config.size(); ++x) refresh(config, x);
}

void UnstableIndex::refresh(const LatticeConfig& config, std::size_t x) {
    const bool unstable = config.heights[x] >= 1.0;
    if (unstable && pos_[x] == kNoSite) {
        pos_[x] = members_.size();
        members_.push_back(x);
    } else if (!unstable && pos_[x] != kNoSite) {
        const std::size_t i = pos_[x];
        const std::size_t last = members_.back();
        members_[i] = last;
        pos_[last] = i;
        members_.pop_back();
        pos_[x] = kNoSite;
    }
}

std::string_view to_string(Outcome outcome) {
    switch (outcome) {
        case Outcome::Stabilized: return "stabilized";
        case Outcome::ActiveAtCutoff: return "active-at-cutoff";
        case Outcome::Inconclusive: return "inconclusive";
    }
    return "?";
}

namespace {

double least_squares_slope(const std::vector<Snapshot>& trace) {
    if (trace.size() < 2) return 0.0;
    double st = 0, sm = 0;
    for (const auto& s : trace) {
        st += s.t;
        sm += static_cast<double>(s.min_M);
    }
    const double n = static_cast<double>(trace.size());
    const double mt = st / n, mm = sm / n;
    double num = 0, den = 0;
    for (const auto& s : trace) {
        num += (s.t - mt) * (static_cast<double>(s.min_M) - mm);
        den += (s.t - mt) * (s.t - mt);
    }
    return den > 0 ? num / den : 0.0;
}

}  // namespace

StabilizabilityVerdict markov_run(LatticeConfig& config, MassLedger& ledger, Rng& rng, const MarkovOptions& options) {
    const std::size_t n = config.size();
    if (ledger.topplings.size() != n || ledger.emitted.size() != n)
        throw std::invalid_argument("markov_run: ledger does not match lattice");
    if (!(options.t_max > 0.0) || !(options.snapshot_every > 0.0))
        throw std::invalid_argument("markov_run: t_max and snapshot interval must be positive");

    StabilizabilityVerdict verdict;
    UnstableIndex unstable(config);
    PoissonSchedule clocks(n);

    auto snapshot = [&](double t) {
        Snapshot s;
        s.t = t;
        s.events = ledger.events;
        s.total_mass = config.total();
        s.fraction_unstable = static_cast<double>(unstable.size()) / static_cast<double>(n);
        const auto ext = kernels::toppling_extremes_omp(ledger.topplings);
        s.min_M = ext.min;
        s.max_M = ext.max;
        verdict.trace.push_back(s);
        if (options.on_snapshot) options.on_snapshot(config, ledger, s);
    };

    snapshot(ledger.t);
    double next_snap = ledger.t + options.snapshot_every;
    bool stabilized = unstable.empty();
    if (stabilized) verdict.t_stab = ledger.t;

    std::uint64_t rings = 0;
    while (!stabilized) {
        if (options.max_events != 0 && rings >= options.max_events) break;
        const auto ring = clocks.next(rng);
        const double t_new = ledger.t + ring.dt;
        if (t_new > options.t_max) {
            while (next_snap <= options.t_max) {
                snapshot(next_snap);
                next_snap += options.snapshot_every;
            }
            ledger.t = options.t_max;
            break;
        }
        while (next_snap <= t_new) {
            snapshot(next_snap);
            next_snap += options.snapshot_every;
        }
        ledger.t = t_new;
        ++ledger.events;
        ++rings;
        const std::size_t x = ring.site;
        if (!unstable.contains(x)) continue;
        topple_lattice(config, x, ledger);
        unstable.refresh(config, x);
        for (auto y : config.geometry->neighbors(x))
            if (y != kNoSite) unstable.refresh(config, y);
        if (unstable.empty()) {
            stabilized = true;
            verdict.t_stab = t_new;
        }
    }

    if (verdict.trace.back().t < ledger.t) snapshot(ledger.t);
    const auto ext = kernels::toppling_extremes_omp(ledger.topplings);
    verdict.min_M = ext.min;
    verdict.max_M = ext.max;
    verdict.dissipated = ledger.dissipated;
    verdict.events = ledger.events;
    verdict.topplings = ledger.total_topplings;
    verdict.min_M_slope = least_squares_slope(verdict.trace);
    if (stabilized) verdict.outcome = Outcome::Stabilized;
    else verdict.outcome = ext.min >= options.min_m_threshold ? Outcome::ActiveAtCutoff : Outcome::Inconclusive;
    return verdict;
}

// ++ Parallel rounds, conservation, bonds ++++++++++++++++++++++++++++++++++

LatticeConfig parallel_round(const LatticeConfig& config, MassLedger* ledger) {
    LatticeConfig out(config.geometry);
    kernels::parallel_round_omp(config, out, ledger);
    return out;
}

double MassIdentityReport::max() const { return std::max({site_residual, matrix_residual, balance_residual}); }

MassIdentityReport mass_identity_check(const LatticeConfig& initial, const LatticeConfig& current,
                                       const MassLedger& ledger) {
    if (!initial.geometry || !current.geometry || !(*initial.geometry == *current.geometry))
        throw std::invalid_argument("mass_identity_check: geometry mismatch");
    const Geometry& g = *current.geometry;
    if (ledger.emitted.size() != g.size()) throw std::invalid_argument("mass_identity_check: ledger size mismatch");

    MassIdentityReport r;
    r.site_residual = kernels::site_identity_residual_omp(initial, current, ledger);

    // Delta L with neighbors recomputed from coordinates rather than the table.
    const std::size_t d = g.dim();
    const double inv = 1.0 / static_cast<double>(2 * d);
    const auto& sides = g.sides();
    std::vector<std::size_t> c(d);
    for (std::size_t x = 0; x < g.size(); ++x) {
        std::size_t rest = x;
        for (std::size_t k = d; k-- > 0;) {
            c[k] = rest % sides[k];
            rest /= sides[k];
        }
        double delta_l = -ledger.emitted[x];
        for (std::size_t k = 0; k < d; ++k) {
            for (int dir : {-1, +1}) {
                auto nc = c;
                const auto len = static_cast<long long>(sides[k]);
                long long v = static_cast<long long>(c[k]) + dir;
                if (v < 0 || v >= len) {
                    if (g.boundary() == Boundary::DissipativeBox) continue;
                    v = (v + len) % len;
                }
                nc[k] = static_cast<std::size_t>(v);
                delta_l += inv * ledger.emitted[g.index(nc)];
            }
        }
        r.matrix_residual = std::max(r.matrix_residual, std::abs(current.heights[x] - initial.heights[x] - delta_l));
    }

    r.balance_residual = std::abs(kernels::total_mass_omp(current.heights) -
                                  (kernels::total_mass_omp(initial.heights) - ledger.dissipated));
    return r;
}

std::vector<std::size_t> box_region(const Geometry& geometry, std::span<const std::size_t> origin,
                                    std::span<const std::size_t> extent) {
    const std::size_t d = geometry.dim();
    if (origin.size() != d || extent.size() != d) throw std::invalid_argument("box_region: arity mismatch");
    std::size_t count = 1;
    for (std::size_t k = 0; k < d; ++k) {
        if (extent[k] == 0 || extent[k] > geometry.sides()[k]) throw std::out_of_range("box_region: bad extent");
        if (geometry.boundary() == Boundary::DissipativeBox && origin[k] + extent[k] > geometry.sides()[k])
            throw std::out_of_range("box_region: region leaves the lattice");
        count *= extent[k];
    }
    std::vector<std::size_t> sites;
    sites.reserve(count);
    std::vector<std::size_t> offset(d, 0), c(d);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < d; ++k) c[k] = (origin[k] + offset[k]) % geometry.sides()[k];
        sites.push_back(geometry.index(c));
        for (std::size_t k = d; k-- > 0;) {
            if (++offset[k] < extent[k]) break;
            offset[k] = 0;
        }
    }
    return sites;
}

std::size_t count_internal_bonds(const Geometry& geometry, std::span<const std::size_t> region) {
    std::vector<char> inside(geometry.size(), 0);
    for (auto x : region) {
        if (x >= geometry.size()) throw std::out_of_range("count_internal_bonds: site outside lattice");
        inside[x] = 1;
    }
    std::size_t bonds = 0;
    for (std::size_t x = 0; x < geometry.size(); ++x) {
        if (!inside[x]) continue;
        const auto nbrs = geometry.neighbors(x);
        for (std::size_t k = 0; k < geometry.dim(); ++k) {
            const auto y = nbrs[2 * k + 1];
            if (y != kNoSite && inside[y]) ++bonds;
        }
    }
    return bonds;
}

BondCheck bond_bound_check(const LatticeConfig& config, std::span<const std::size_t> region, const MassLedger& ledger) {
    BondCheck c;
    c.precondition = std::all_of(region.begin(), region.end(), [&](std::size_t x) { return ledger.topplings.at(x) >= 1; });
    c.bonds = count_internal_bonds(*config.geometry, region);
    for (auto x : region) c.mass += config.heights[x];
    c.bound = static_cast<double>(c.bonds) / static_cast<double>(config.geometry->degree());
    c.holds = c.mass >= c.bound - 1e-12;
    return c;
}

// ++ Initial measures and experiments ++++++++++++++++++++++++++++++++++++++

std::string_view to_string(DensityKind kind) {
    switch (kind) {
        case DensityKind::IidUniform: return "iid";
        case DensityKind::Constant: return "constant";
        case DensityKind::Checkerboard: return "checkerboard";
        case DensityKind::NearFull: return "near-full";
    }
    return "?";
}

DensityKind parse_density_kind(std::string_view name) {
    if (name == "iid" || name == "iid-uniform") return DensityKind::IidUniform;
    if (name == "constant") return DensityKind::Constant;
    if (name == "checkerboard") return DensityKind::Checkerboard;
    if (name == "near-full") return DensityKind::NearFull;
    throw std::invalid_argument("unknown generator '" + std::string(name) + "'");
}

std::string DensitySpec::describe() const {
    return std::string(to_string(kind)) + "(" + format_short(rho) + ")";
}

LatticeConfig generate(const DensitySpec& spec, const GeometryPtr& geometry, Rng& rng) {
    if (!(spec.rho >= 0.0) || !std::isfinite(spec.rho)) throw std::invalid_argument("density must be finite and >= 0");
    LatticeConfig c(geometry);
    const Geometry& g = *geometry;
    switch (spec.kind) {
        case DensityKind::IidUniform:
            for (auto& h : c.heights) h = rng.uniform(0.0, 2.0 * spec.rho);
            break;
        case DensityKind::Constant:
            std::fill(c.heights.begin(), c.heights.end(), spec.rho);
            break;
        case DensityKind::Checkerboard: {
            for (auto s : g.sides())
                if (s % 2 != 0) throw std::invalid_argument("checkerboard needs even side lengths");
            const unsigned loaded = rng.bernoulli(0.5) ? 1u : 0u;
            for (std::size_t x = 0; x < g.size(); ++x) c.heights[x] = g.parity(x) == loaded ? 2.0 * spec.rho : 0.0;
            break;
        }
        case DensityKind::NearFull: {
            const double low = 1.0 - 1.0 / static_cast<double>(g.degree());
            if (!(spec.rho > low && spec.rho < 1.0))
                throw std::invalid_argument("near-full needs 1 - 1/(2d) < rho < 1");
            const double p = (spec.rho - low) / (1.0 - low);
            for (auto& h : c.heights) h = rng.bernoulli(p) ? 1.0 : low;
            break;
        }
    }
    return c;
}

ExperimentSummary stabilizability_experiment(const DensitySpec& spec, const GeometryPtr& geometry,
                                             const MarkovOptions& options, std::size_t replicas, std::uint64_t seed) {
    if (replicas < 1) throw std::invalid_argument("need at least one replica");
    {
        Rng probe(seed);
        (void)generate(spec, geometry, probe);  // reject bad parameters before going parallel
    }
    ExperimentSummary summary;
    summary.replicas.resize(replicas);

#pragma omp parallel for schedule(dynamic)
    for (std::size_t r = 0; r < replicas; ++r) {
        Rng gen_rng(seed, {r, 1});
        Rng run_rng(seed, {r, 2});
        LatticeConfig config = generate(spec, geometry, gen_rng);
        const LatticeConfig initial = config;
        MassLedger ledger(config.size());
        auto& out = summary.replicas[r];
        out.replica = r;
        auto keep_worst = [&out](const MassIdentityReport& m) {
            out.conservation.site_residual = std::max(out.conservation.site_residual, m.site_residual);
            out.conservation.matrix_residual = std::max(out.conservation.matrix_residual, m.matrix_residual);
            out.conservation.balance_residual = std::max(out.conservation.balance_residual, m.balance_residual);
        };
        MarkovOptions local = options;
        local.on_snapshot = [&](const LatticeConfig& c, const MassLedger& l, const Snapshot& s) {
            keep_worst(mass_identity_check(initial, c, l));
            if (options.on_snapshot) options.on_snapshot(c, l, s);
        };
        out.verdict = markov_run(config, ledger, run_rng, local);
        keep_worst(mass_identity_check(initial, config, ledger));
        out.final_config = std::move(config);
    }

    std::vector<double> t_stab;
    double slope_sum = 0.0;
    std::size_t active = 0;
    for (const auto& r : summary.replicas) {
        if (r.verdict.outcome == Outcome::Stabilized) t_stab.push_back(r.verdict.t_stab);
        if (r.verdict.outcome == Outcome::ActiveAtCutoff) {
            slope_sum += r.verdict.min_M_slope;
            ++active;
        }
        summary.max_conservation_residual = std::max(summary.max_conservation_residual, r.conservation.max());
    }
    summary.fraction_stabilized = static_cast<double>(t_stab.size()) / static_cast<double>(replicas);
    if (!t_stab.empty()) {
        std::sort(t_stab.begin(), t_stab.end());
        const std::size_t m = t_stab.size();
        summary.median_t_stab = m % 2 ? t_stab[m / 2] : 0.5 * (t_stab[m / 2 - 1] + t_stab[m / 2]);
    }
    if (active) summary.mean_active_slope = slope_sum / static_cast<double>(active);
    return summary;
}

void write_snapshot_csv(std::ostream& out, const LatticeConfig& config, double t, std::uint64_t seed) {
    const Geometry& g = *config.geometry;
    nlohmann::ordered_json header;
    header["dim"] = g.dim();
    header["sides"] = g.sides();
    header["boundary"] = to_string(g.boundary());
    header["t"] = t;
    header["seed"] = seed;
    out << "# " << header.dump() << "\nheight\n";
    for (double h : config.heights) out << format_real(h) << '\n';
}

}  // namespace zhang
