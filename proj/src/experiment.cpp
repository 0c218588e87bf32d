#include "zhang/experiment.hpp"

#include <charconv>
#include <ostream>

#include <json.hpp>

namespace zhang {

using nlohmann::ordered_json;

namespace {

ordered_json spec_object(const ExperimentSpec& s) {
    ordered_json j;
    j["command"] = s.command;
    j["n"] = s.n;
    j["a"] = s.a;
    j["b"] = s.b;
    j["chain"] = s.chain;
    j["eta"] = s.eta;
    j["xi"] = s.xi;
    j["policy"] = s.policy;
    j["burn_in"] = s.burn_in;
    j["samples"] = s.samples;
    j["bins"] = s.bins;
    j["seeds"] = s.seeds;
    j["max_steps"] = s.max_steps;
    j["dim"] = s.dim;
    j["sides"] = s.sides;
    j["boundary"] = s.boundary;
    j["generator"] = s.generator;
    j["rho"] = s.rho;
    j["t_max"] = s.t_max;
    j["snapshot_every"] = s.snapshot_every;
    j["min_m_threshold"] = s.min_m_threshold;
    j["replicas"] = s.replicas;
    j["seed"] = s.seed;
    j["out"] = s.out;
    j["format"] = s.format;
    return j;
}

ExperimentSpec spec_from_object(const ordered_json& j) {
    ExperimentSpec s;
    try {
        j.at("command").get_to(s.command);
        j.at("n").get_to(s.n);
        j.at("a").get_to(s.a);
        j.at("b").get_to(s.b);
        j.at("chain").get_to(s.chain);
        j.at("eta").get_to(s.eta);
        j.at("xi").get_to(s.xi);
        j.at("policy").get_to(s.policy);
        j.at("burn_in").get_to(s.burn_in);
        j.at("samples").get_to(s.samples);
        j.at("bins").get_to(s.bins);
        j.at("seeds").get_to(s.seeds);
        j.at("max_steps").get_to(s.max_steps);
        j.at("dim").get_to(s.dim);
        j.at("sides").get_to(s.sides);
        j.at("boundary").get_to(s.boundary);
        j.at("generator").get_to(s.generator);
        j.at("rho").get_to(s.rho);
        j.at("t_max").get_to(s.t_max);
        j.at("snapshot_every").get_to(s.snapshot_every);
        j.at("min_m_threshold").get_to(s.min_m_threshold);
        j.at("replicas").get_to(s.replicas);
        j.at("seed").get_to(s.seed);
        j.at("out").get_to(s.out);
        j.at("format").get_to(s.format);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed experiment spec: ") + e.what());
    }
    return s;
}

template <class T>
std::vector<T> parse_list(std::string_view text, const char* what) {
    std::vector<T> out;
    const char* p = text.data();
    const char* end = p + text.size();
    auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    while (p < end) {
        while (p < end && is_sep(*p)) ++p;
        if (p == end) break;
        T v{};
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc() || (next < end && !is_sep(*next)))
            throw std::invalid_argument(std::string("cannot parse ") + what + " list '" + std::string(text) + "'");
        out.push_back(v);
        p = next;
    }
    return out;
}

}  // namespace

std::string to_json(const ExperimentSpec& spec) { return spec_object(spec).dump(); }

ExperimentSpec spec_from_json(std::string_view text) {
    const auto j = ordered_json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("experiment spec is not a JSON object");
    return spec_from_object(j);
}

std::string artifact_version() { return std::string("zhang ") + ZHANG_VERSION; }

void write_spec_echo(std::ostream& out, const ExperimentSpec& spec) {
    ordered_json j;
    j["artifact"] = artifact_version();
    j["spec"] = spec_object(spec);
    if (spec.format == "jsonl") out << j.dump() << '\n';
    else out << "# " << j.dump() << '\n';
}

ExperimentSpec read_spec_echo(std::string_view line) {
    if (line.starts_with("# ")) line.remove_prefix(2);
    const auto j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("spec")) throw std::invalid_argument("not a spec echo line");
    return spec_from_object(j["spec"]);
}

std::vector<double> parse_real_list(std::string_view text) { return parse_list<double>(text, "real"); }

std::vector<std::size_t> parse_size_list(std::string_view text) { return parse_list<std::size_t>(text, "integer"); }

}  // namespace zhang
