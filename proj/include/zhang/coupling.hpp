#ifndef ZHANG_COUPLING_HPP
#define ZHANG_COUPLING_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "zhang/core.hpp"
#include "zhang/finite_chain.hpp"
#include "zhang/rng.hpp"

namespace zhang {

// ++ Closed-form constants ++++++++++++++++++++++++++++++++++++++++++++++++++

/// Per-avalanche contraction factor 1 - 2^{-ceil(3N/2)} of the equal-addition coupling.
double contraction_rate(std::size_t n);

/// Largest starting difference for which the merging stage can succeed:
/// (b - a) / (6 + 16 prod_{l=1}^{N-1} (1 + 2^{N-2-l})).
/// Throws std::invalid_argument unless N >= 2 and 0 <= a < b <= 1.
double epsilon_abn(double a, double b, std::size_t n);

/// Number of avalanches after which the contraction bound drops below eps:
/// 2 ceil(log_q(2 eps / N)), q = contraction_rate(N).
std::uint64_t k_epsilon(std::size_t n, double eps);

/// Time window of the contraction stage: ceil(2 / (a + b)) * k_epsilon(N, eps).
/// Throws std::invalid_argument unless 0 < 2 eps / N < 1.
std::uint64_t t_epsilon(double a, double b, std::size_t n, double eps);

/// Correction applied to the second chain's addition at merging avalanche k:
/// sum_{y=1}^{N-k} 2^{y-1} diff_y, where diff[0] is site 1.
double correction_D(std::span<const double> diff, std::size_t k, std::size_t n);

/// a + (u + d - a) mod (b - a): a measure-preserving map of [a, b] onto itself.
double coupled_amount(double u, double d, double a, double b);

struct CouplingConstants {
    double a = 0.0;
    double b = 1.0;
    std::size_t n = 2;
    double eps1 = 0.0;
    std::vector<double> eps_schedule;  ///< eps_1 .. eps_N, eps_{k+1} = (1 + 2^{N-k-2}) eps_k
    std::vector<double> d_bounds;      ///< d_1 .. d_{N-1}, bounds on |D_k|
    std::uint64_t k_eps = 0;
    std::uint64_t t_eps = 0;

    static CouplingConstants compute(double a, double b, std::size_t n);
};

// ++ Linear shadow of the contraction stage +++++++++++++++++++++++++++++++++

/// Tracks each height as a linear form sum_l A_{l,y} S_l + sum_m B_{m,y} eta_m
/// in the avalanche sums S_l and the initial heights eta_m.
class CoefficientTracker {
public:
    explicit CoefficientTracker(std::size_t n);

    /// Start a new avalanche sum variable S_{k+1}; returns its index k (0-based).
    std::size_t open_sum();
    /// Add the sum variable `l` (coefficient 1) to `site`.
    void add_sum(std::size_t site, std::size_t l);
    /// Apply a Zhang toppling of `site` to the forms.
    void topple(std::size_t site);

    /// Heights obtained by evaluating the forms.
    [[nodiscard]] std::vector<double> evaluate(std::span<const double> sums, std::span<const double> initial) const;

    [[nodiscard]] double A(std::size_t l, std::size_t y) const;
    [[nodiscard]] double B(std::size_t m, std::size_t y) const;
    [[nodiscard]] double max_B() const;
    [[nodiscard]] std::size_t sums() const { return k_; }

private:
    [[nodiscard]] std::size_t width() const { return k_ + n_; }
    std::size_t n_;
    std::size_t k_ = 0;
    // forms_[y] holds [A_{0,y} .. A_{k-1,y}, B_{0,y} .. B_{n-1,y}]
    std::vector<std::vector<double>> forms_;
};

class BoundViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct ContractionRow {
    std::uint64_t k = 0;         ///< avalanche index
    std::uint64_t gap = 0;       ///< steps since previous avalanche
    double max_B = 0.0;
    double b_bound = 0.0;        ///< q^k
    double residual = 0.0;       ///< |tracked - simulated| max over sites
    double max_diff = 0.0;       ///< between the two chains
    double diff_bound = 0.0;     ///< (N/2) q^k
    bool in_E_N = false;         ///< both chains in E_N
};

struct ContractionReport {
    std::size_t n = 0;
    std::vector<ContractionRow> rows;  ///< rows[0] is k = 0
};

/// Runs the forced contraction dynamics (heavy additions, to site N until it
/// topples, then to site 1, alternating) on two chains started in E_N with
/// equal additions, shadowed by a CoefficientTracker. Throws BoundViolation
/// if the coefficient bound, the difference bound, the linear-shadow
/// residual (1e-9), the avalanche gap or the E_N parity fails.
ContractionReport verify_contraction(std::size_t n, std::uint64_t k_max, Rng& rng, double a = 0.0, double b = 1.0);

// ++ The three-stage coupling ++++++++++++++++++++++++++++++++++++++++++++++

enum class CouplingPhase { Independent = 0, Contraction = 1, Merging = 2, Merged = 3 };

std::string_view to_string(CouplingPhase phase);

/// How the contraction stage reacts to draws.
///   Strict:   any addition that is not heavy or not at the targeted boundary
///             site sends the coupling back to independent evolution.
///   Windowed: equal additions are accepted unconditionally; the stage ends
///             when both chains are in E_N within eps of each other, or
///             restarts once t_eps steps have elapsed.
/// The merging stage always restarts on a violating draw.
enum class CouplingPolicy { Strict, Windowed };

std::string_view to_string(CouplingPolicy policy);
CouplingPolicy parse_coupling_policy(std::string_view name);

class CouplingInconsistency : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Two coupled copies of the (N, [a, b]) process. Chain A draws from its own
/// stream in every phase; chain B draws from its own stream only while the
/// chains evolve independently, otherwise its addition is derived from A's.
class Coupling {
public:
    Coupling(ChainParams params, ChainConfig eta, ChainConfig xi, std::uint64_t seed,
             CouplingPolicy policy = CouplingPolicy::Windowed);

    /// One time step of both chains (works in every phase, including merged).
    void step();

    [[nodiscard]] CouplingPhase phase() const { return phase_; }
    [[nodiscard]] const ChainProcess& chain_a() const { return a_; }
    [[nodiscard]] const ChainProcess& chain_b() const { return b_; }
    [[nodiscard]] const CouplingConstants& constants() const { return consts_; }
    [[nodiscard]] std::uint64_t time() const { return t_; }
    [[nodiscard]] std::uint64_t restarts() const { return restarts_; }
    [[nodiscard]] std::optional<std::uint64_t> merge_time() const { return merge_time_; }
    /// Steps spent in each phase, indexed by CouplingPhase.
    [[nodiscard]] const std::array<std::uint64_t, 4>& phase_times() const { return phase_times_; }
    [[nodiscard]] std::uint64_t merging_entries() const { return merging_entries_; }
    /// Steps and avalanches of the merging stage that succeeded.
    [[nodiscard]] std::uint64_t merging_steps() const { return merging_steps_; }
    [[nodiscard]] std::uint64_t merging_avalanches() const { return merging_avalanches_; }
    /// Additions applied at the last step, in chain coordinates (0-based sites).
    [[nodiscard]] const std::pair<AdditionEvent, AdditionEvent>& last_additions() const { return last_; }
    /// Whether the coupling frame is mirrored (E_1 treated as E_N).
    [[nodiscard]] bool mirrored() const { return mirrored_; }

private:
    void step_independent();
    void step_contraction();
    void step_merging();
    void step_merged();

    void enter_contraction();
    void enter_merging();
    void restart();
    void check_contraction_exit();

    [[nodiscard]] std::size_t to_chain(std::size_t frame_site) const;
    [[nodiscard]] ChainConfig frame(const ChainConfig& c) const;
    std::pair<StepRecord, StepRecord> apply(std::size_t frame_site, double amount_a, double amount_b);

    ChainParams params_;
    CouplingConstants consts_;
    CouplingPolicy policy_;
    ChainProcess a_;
    ChainProcess b_;
    CouplingPhase phase_ = CouplingPhase::Independent;
    bool mirrored_ = false;
    std::uint64_t t_ = 0;
    std::uint64_t restarts_ = 0;
    std::optional<std::uint64_t> merge_time_;
    std::array<std::uint64_t, 4> phase_times_{};
    std::pair<AdditionEvent, AdditionEvent> last_{};

    // contraction stage
    std::uint64_t stage_steps_ = 0;
    std::uint64_t stage_avalanches_ = 0;
    std::size_t target_ = 0;

    // merging stage
    std::size_t merge_k_ = 1;
    std::uint64_t merging_entries_ = 0;
    std::uint64_t merging_steps_ = 0;
    std::uint64_t merging_avalanches_ = 0;
};

struct CouplingResult {
    std::uint64_t seed = 0;
    bool merged = false;
    std::optional<std::uint64_t> merge_time;
    std::uint64_t restarts = 0;
    std::array<std::uint64_t, 4> phase_times{};
    std::uint64_t merging_entries = 0;
    std::uint64_t merging_steps = 0;
    std::uint64_t merging_avalanches = 0;
};

/// Steps a fresh coupling until merged or `max_steps`.
CouplingResult run_coupling(const ChainParams& params, const ChainConfig& eta, const ChainConfig& xi,
                            std::uint64_t seed, std::uint64_t max_steps,
                            CouplingPolicy policy = CouplingPolicy::Windowed);

/// {"seed":..,"merged":..,"merge_time":..,"restarts":..,"phase_times":[..]}
void write_coupling_jsonl(std::ostream& out, const CouplingResult& result);

}  // namespace zhang

#endif
