#ifndef ZHANG_EXPERIMENT_HPP
#define ZHANG_EXPERIMENT_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zhang {

/// Everything needed to reproduce one CLI invocation.
struct ExperimentSpec {
    std::string command;

    // finite chain
    std::size_t n = 5;
    double a = 0.0;
    double b = 1.0;
    std::vector<double> chain;  ///< stabilize input, or finite-run initial state
    std::vector<double> eta;    ///< couple: first start (empty = zeros)
    std::vector<double> xi;     ///< couple: second start (empty = all 0.9)
    std::string policy;         ///< toppling policy (stabilize) or coupling policy (couple)
    std::uint64_t burn_in = 0;
    std::uint64_t samples = 0;
    std::size_t bins = 256;
    std::uint64_t seeds = 1;  ///< couple: number of consecutive seeds
    std::uint64_t max_steps = 1'000'000;

    // lattice
    std::size_t dim = 1;
    std::vector<std::size_t> sides;
    std::string boundary = "torus";
    std::string generator = "iid";
    std::vector<double> rho;  ///< one value, or the sweep grid
    double t_max = 100.0;
    double snapshot_every = 1.0;
    std::uint64_t min_m_threshold = 10;
    std::size_t replicas = 1;

    // common
    std::uint64_t seed = 0;
    std::string out;
    std::string format = "csv";

    bool operator==(const ExperimentSpec&) const = default;
};

std::string to_json(const ExperimentSpec& spec);
/// Throws std::invalid_argument on malformed input.
ExperimentSpec spec_from_json(std::string_view text);

/// Artifact name and version, e.g. "zhang 0.1.0".
std::string artifact_version();

/// Header line that opens every output file: "# {json}" for CSV,
/// a plain JSON object for JSON-lines.
void write_spec_echo(std::ostream& out, const ExperimentSpec& spec);
/// Inverse of write_spec_echo for either format.
ExperimentSpec read_spec_echo(std::string_view line);

/// "0,0.7,1.4" -> {0, 0.7, 1.4}; locale independent. Whitespace and commas separate.
std::vector<double> parse_real_list(std::string_view text);
std::vector<std::size_t> parse_size_list(std::string_view text);

}  // namespace zhang

#endif
