#include "zhang/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "zhang/core.hpp"
#include "zhang/coupling.hpp"
#include "zhang/experiment.hpp"
#include "zhang/finite_chain.hpp"
#include "zhang/format.hpp"
#include "zhang/lattice.hpp"

namespace zhang {

namespace {

constexpr double kConservationTolerance = 1e-9;

std::vector<double> read_chain_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open chain file '" + path + "'");
    std::string line, text;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        text += line;
        text += '\n';
    }
    return parse_real_list(text);
}

/// Owns the --out file when one is given, otherwise forwards to `fallback`.
class Sink {
public:
    Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
        if (path.empty()) return;
        file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
        if (!*file_) throw std::invalid_argument("cannot open output file '" + path + "'");
        stream_ = file_.get();
    }
    std::ostream& get() { return *stream_; }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* stream_;
};

ChainParams chain_params(const ExperimentSpec& s) {
    ChainParams p{s.n, s.a, s.b};
    p.validate();
    return p;
}

ChainConfig start_config(const std::vector<double>& given, std::size_t n, double fill, const char* what) {
    if (given.empty()) return ChainConfig(std::vector<double>(n, fill));
    if (given.size() != n) throw std::invalid_argument(std::string(what) + " has the wrong length");
    return ChainConfig(given);
}

void require_format(const ExperimentSpec& s) {
    if (s.format != "csv" && s.format != "jsonl") throw std::invalid_argument("format must be csv or jsonl");
}

// ++ stabilize ++

void cmd_stabilize(const ExperimentSpec& s, std::ostream& out) {
    if (s.chain.empty()) throw std::invalid_argument("stabilize needs --chain or --chain-file");
    ChainConfig config(s.chain);
    for (double h : config.heights)
        if (!(h >= 0.0)) throw std::invalid_argument("heights must be nonnegative");
    Rng rng(s.seed);
    const auto result = stabilize_chain(config, parse_policy(s.policy), &rng);
    Sink sink(s.out, out);
    if (!s.out.empty()) write_spec_echo(sink.get(), s);
    const std::span<const double> h = result.config.heights;
    const std::span<const std::uint64_t> c = result.log.counts;
    if (s.format == "jsonl") {
        sink.get() << "{\"heights\":[" << join(h, format_real) << "],\"counts\":["
                   << join(c, [](std::uint64_t v) { return std::to_string(v); }) << "]}\n";
    } else {
        sink.get() << join(h, format_short) << " / " << join(c, [](std::uint64_t v) { return std::to_string(v); })
                   << '\n';
    }
}

// ++ finite-run ++

void cmd_finite_run(const ExperimentSpec& s, std::ostream& out) {
    const auto params = chain_params(s);
    ChainProcess process(params, start_config(s.chain, s.n, 0.0, "initial chain"), Rng(s.seed));
    Sink sink(s.out, out);
    write_spec_echo(sink.get(), s);
    if (s.format == "jsonl") {
        process.advance(s.burn_in);
        for (std::uint64_t i = 0; i < s.samples; ++i) write_event_jsonl(sink.get(), process.step());
        return;
    }
    const auto stats = run_stationary(process, s.burn_in, s.samples, s.bins);
    write_stats_csv_header(sink.get(), s.bins);
    write_stats_csv_rows(sink.get(), stats);
}

// ++ couple ++

void cmd_couple(const ExperimentSpec& s, std::ostream& out) {
    const auto params = chain_params(s);
    if (params.n < 2) throw std::invalid_argument("couple needs N >= 2");
    if (s.seeds < 1) throw std::invalid_argument("couple needs at least one seed");
    const auto policy = parse_coupling_policy(s.policy);
    const auto eta = start_config(s.eta, s.n, 0.0, "eta");
    const auto xi = start_config(s.xi, s.n, 0.9, "xi");
    (void)Coupling(params, eta, xi, s.seed, policy);  // validate before going parallel

    std::vector<CouplingResult> results(s.seeds);
    const auto count = static_cast<std::int64_t>(s.seeds);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < count; ++i)
        results[i] = run_coupling(params, eta, xi, s.seed + static_cast<std::uint64_t>(i), s.max_steps, policy);

    auto resolved = s;
    resolved.eta = eta.heights;
    resolved.xi = xi.heights;
    Sink sink(s.out, out);
    write_spec_echo(sink.get(), resolved);
    if (s.format == "jsonl") {
        for (const auto& r : results) write_coupling_jsonl(sink.get(), r);
        return;
    }
    sink.get() << "seed,merged,merge_time,restarts,t_independent,t_contraction,t_merging,t_merged\n";
    for (const auto& r : results) {
        sink.get() << r.seed << ',' << (r.merged ? 1 : 0) << ',' << (r.merge_time ? std::to_string(*r.merge_time) : "")
                   << ',' << r.restarts;
        for (auto t : r.phase_times) sink.get() << ',' << t;
        sink.get() << '\n';
    }
}

// ++ infinite / sweep ++

GeometryPtr lattice_geometry(const ExperimentSpec& s) {
    if (s.sides.size() != s.dim) throw std::invalid_argument("number of sides must equal the dimension");
    return make_geometry(s.sides, parse_boundary(s.boundary));
}

MarkovOptions markov_options(const ExperimentSpec& s) {
    MarkovOptions o;
    o.t_max = s.t_max;
    o.snapshot_every = s.snapshot_every;
    o.min_m_threshold = s.min_m_threshold;
    return o;
}

void write_verdict_header(std::ostream& out, const ExperimentSpec& s) {
    if (s.format == "csv")
        out << "spec,geometry,seed,replica,outcome,t_stab,min_M,max_M,dissipated,min_M_slope,conservation_residual\n";
}

void write_verdict_row(std::ostream& out, const ExperimentSpec& s, const DensitySpec& density, const Geometry& g,
                       const ReplicaResult& r) {
    const auto& v = r.verdict;
    const bool stabilized = v.outcome == Outcome::Stabilized;
    if (s.format == "jsonl") {
        nlohmann::ordered_json j;
        j["spec"] = density.describe();
        j["geometry"] = g.describe();
        j["seed"] = s.seed;
        j["replica"] = r.replica;
        j["outcome"] = to_string(v.outcome);
        j["t_stab"] = stabilized ? nlohmann::ordered_json(v.t_stab) : nlohmann::ordered_json(nullptr);
        j["min_M"] = v.min_M;
        j["max_M"] = v.max_M;
        j["dissipated"] = v.dissipated;
        j["min_M_slope"] = v.min_M_slope;
        j["conservation_residual"] = r.conservation.max();
        out << j.dump() << '\n';
        return;
    }
    out << density.describe() << ',' << g.describe() << ',' << s.seed << ',' << r.replica << ','
        << to_string(v.outcome) << ',' << (stabilized ? format_real(v.t_stab) : "") << ',' << v.min_M << ','
        << v.max_M << ',' << format_real(v.dissipated) << ',' << format_real(v.min_M_slope) << ','
        << format_real(r.conservation.max()) << '\n';
}

void check_conservation(const ExperimentSummary& summary) {
    if (summary.max_conservation_residual > kConservationTolerance)
        throw InvariantViolation("mass identity residual " + format_real(summary.max_conservation_residual) +
                                 " exceeds " + format_real(kConservationTolerance));
}

void cmd_infinite(const ExperimentSpec& s, const std::string& snapshot_dir, std::ostream& out) {
    if (s.rho.size() != 1) throw std::invalid_argument("infinite needs exactly one --rho");
    const auto geometry = lattice_geometry(s);
    const DensitySpec density{parse_density_kind(s.generator), s.rho[0]};
    const auto summary = stabilizability_experiment(density, geometry, markov_options(s), s.replicas, s.seed);
    check_conservation(summary);

    Sink sink(s.out, out);
    write_spec_echo(sink.get(), s);
    write_verdict_header(sink.get(), s);
    for (const auto& r : summary.replicas) write_verdict_row(sink.get(), s, density, *geometry, r);

    if (snapshot_dir.empty()) return;
    std::filesystem::create_directories(snapshot_dir);
    for (const auto& r : summary.replicas) {
        const auto path = std::filesystem::path(snapshot_dir) / ("replica_" + std::to_string(r.replica) + ".csv");
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::invalid_argument("cannot write snapshot '" + path.string() + "'");
        write_snapshot_csv(f, r.final_config, r.verdict.trace.back().t, s.seed);
    }
}

void cmd_sweep(const ExperimentSpec& s, std::ostream& out) {
    if (s.rho.empty()) throw std::invalid_argument("sweep needs a nonempty --rho grid");
    const auto geometry = lattice_geometry(s);
    const auto kind = parse_density_kind(s.generator);
    std::vector<ExperimentSummary> summaries;
    summaries.reserve(s.rho.size());
    for (double rho : s.rho) {
        summaries.push_back(stabilizability_experiment({kind, rho}, geometry, markov_options(s), s.replicas, s.seed));
        check_conservation(summaries.back());
    }
    Sink sink(s.out, out);
    write_spec_echo(sink.get(), s);
    write_verdict_header(sink.get(), s);
    for (std::size_t i = 0; i < s.rho.size(); ++i)
        for (const auto& r : summaries[i].replicas) write_verdict_row(sink.get(), s, {kind, s.rho[i]}, *geometry, r);
}

// ++ parsing ++

struct Inputs {
    ExperimentSpec spec;
    std::string chain_literal;
    std::string chain_file;
    std::string eta_literal;
    std::string xi_literal;
    std::string rho_literal;
    std::string sides_literal;
    std::size_t side = 0;
    std::string snapshot_dir;
};

void add_common(CLI::App* cmd, Inputs& in) {
    cmd->add_option("--seed", in.spec.seed, "Base RNG seed")->capture_default_str();
    cmd->add_option("--out", in.spec.out, "Output file (default: standard output)");
    cmd->add_option("--format", in.spec.format, "csv or jsonl");
    cmd->configurable();
}

void add_chain_params(CLI::App* cmd, Inputs& in) {
    cmd->add_option("--n,-N", in.spec.n, "Number of sites")->capture_default_str();
    cmd->add_option("--a", in.spec.a, "Lower end of the addition interval")->capture_default_str();
    cmd->add_option("--b", in.spec.b, "Upper end of the addition interval")->capture_default_str();
}

void add_lattice_params(CLI::App* cmd, Inputs& in) {
    cmd->add_option("--d,--dim", in.spec.dim, "Lattice dimension")->capture_default_str();
    cmd->add_option("--side", in.side, "Side length used for every dimension");
    cmd->add_option("--sides", in.sides_literal, "Comma-separated side lengths");
    cmd->add_option("--boundary", in.spec.boundary, "torus or box")->capture_default_str();
    cmd->add_option("--gen", in.spec.generator, "iid, constant, checkerboard or near-full")->capture_default_str();
    cmd->add_option("--rho", in.rho_literal, "Density (a comma-separated grid for sweep)")->required();
    cmd->add_option("--tmax", in.spec.t_max, "Time horizon")->capture_default_str();
    cmd->add_option("--snapshot-every", in.spec.snapshot_every, "Snapshot interval")->capture_default_str();
    cmd->add_option("--min-m", in.spec.min_m_threshold, "Minimum toppling count for active-at-cutoff")
        ->capture_default_str();
    cmd->add_option("--replicas", in.spec.replicas, "Independent replicas")->capture_default_str();
}

void finish_spec(Inputs& in) {
    auto& s = in.spec;
    if (!in.chain_literal.empty() && !in.chain_file.empty())
        throw std::invalid_argument("give either --chain or --chain-file");
    if (!in.chain_literal.empty()) s.chain = parse_real_list(in.chain_literal);
    if (!in.chain_file.empty()) s.chain = read_chain_file(in.chain_file);
    if (!in.eta_literal.empty()) s.eta = parse_real_list(in.eta_literal);
    if (!in.xi_literal.empty()) s.xi = parse_real_list(in.xi_literal);
    if (!in.rho_literal.empty()) s.rho = parse_real_list(in.rho_literal);
    if (s.command == "infinite" || s.command == "sweep") {
        if (in.side && !in.sides_literal.empty()) throw std::invalid_argument("give either --side or --sides");
        if (!in.sides_literal.empty()) s.sides = parse_size_list(in.sides_literal);
        else if (in.side) s.sides.assign(s.dim, in.side);
        else throw std::invalid_argument("lattice needs --side or --sides");
    }
    if (s.policy.empty()) s.policy = s.command == "couple" ? "windowed" : "left";
    if (s.format.empty()) s.format = s.command == "couple" ? "jsonl" : "csv";
    require_format(s);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Zhang sandpile simulator", "zhang"};
    app.set_version_flag("--version", artifact_version());
    app.set_config("--config", "", "key=value file; command-line flags take precedence");
    app.require_subcommand(1);

    Inputs in;
    in.spec.format.clear();

    auto* stabilize = app.add_subcommand("stabilize", "Stabilize one chain under a toppling policy");
    stabilize->add_option("--chain", in.chain_literal, "Comma-separated heights");
    stabilize->add_option("--chain-file", in.chain_file, "File of heights ('#' starts a comment)");
    stabilize->add_option("--policy", in.spec.policy, "left, right, parallel or random");
    add_common(stabilize, in);

    auto* finite = app.add_subcommand("finite-run", "Stationary statistics of the (N,[a,b]) process");
    add_chain_params(finite, in);
    finite->add_option("--burn-in", in.spec.burn_in, "Steps discarded before sampling")->capture_default_str();
    finite->add_option("--samples", in.spec.samples, "Steps recorded")->capture_default_str();
    finite->add_option("--bins", in.spec.bins, "Histogram bins over [0,1)")->capture_default_str();
    finite->add_option("--chain", in.chain_literal, "Initial heights (default all zero)");
    add_common(finite, in);

    auto* couple = app.add_subcommand("couple", "Run the three-stage coupling for consecutive seeds");
    add_chain_params(couple, in);
    couple->add_option("--seeds", in.spec.seeds, "Number of consecutive seeds starting at --seed")
        ->capture_default_str();
    couple->add_option("--max-steps", in.spec.max_steps, "Step cutoff per seed")->capture_default_str();
    couple->add_option("--policy", in.spec.policy, "strict or windowed");
    couple->add_option("--eta", in.eta_literal, "First start (default all zero)");
    couple->add_option("--xi", in.xi_literal, "Second start (default all 0.9)");
    add_common(couple, in);

    auto* infinite = app.add_subcommand("infinite", "Markov toppling process on a finite lattice");
    add_lattice_params(infinite, in);
    infinite->add_option("--snapshot-dir", in.snapshot_dir, "Write final heights of each replica here");
    add_common(infinite, in);

    auto* sweep = app.add_subcommand("sweep", "Stabilizability over a density grid");
    add_lattice_params(sweep, in);
    add_common(sweep, in);

    std::vector<std::string> argv_store{"zhang"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitParameter;
    }

    const auto started = std::chrono::steady_clock::now();
    try {
        for (auto* cmd : {stabilize, finite, couple, infinite, sweep})
            if (cmd->parsed()) in.spec.command = cmd->get_name();
        finish_spec(in);
        const auto& s = in.spec;
        if (s.command == "stabilize") cmd_stabilize(s, out);
        else if (s.command == "finite-run") cmd_finite_run(s, out);
        else if (s.command == "couple") cmd_couple(s, out);
        else if (s.command == "infinite") cmd_infinite(s, in.snapshot_dir, out);
        else cmd_sweep(s, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitParameter;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << '\n';
        return kExitParameter;
    } catch (const std::exception& e) {
        err << "invariant violation: " << e.what() << '\n';
        return kExitInvariant;
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    err << in.spec.command << ": " << format_short(elapsed.count()) << " s\n";
    return kExitOk;
}

}  // namespace zhang
