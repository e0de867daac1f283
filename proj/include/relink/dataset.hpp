#pragma once

// Training, validation and test samples for link prediction.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "relink/attack_graph.hpp"
#include "relink/error.hpp"
#include "relink/key.hpp"
#include "relink/parallel.hpp"
#include "relink/random.hpp"
#include "relink/subgraph.hpp"

namespace relink {

enum class Scenario : std::uint8_t { SelfReferencing, CircuitLibrary };

inline std::string_view scenario_name(Scenario s) { return s == Scenario::SelfReferencing ? "self" : "library"; }

inline Scenario scenario_from_name(std::string_view s) {
    if (s == "self") return Scenario::SelfReferencing;
    if (s == "library") return Scenario::CircuitLibrary;
    throw ValidationError("unknown scenario '" + std::string(s) + "'");
}

/// Whether each candidate link is the true one under `key`. Evaluation and library labelling only.
inline std::vector<bool> candidate_truth(const CandidateSet& c, const KeyAssignment& key) {
    if (key.size() != c.key_count) throw ValidationError("key size does not match the candidate set");
    std::vector<bool> truth(c.links.size(), false);
    for (const CandidateGroup& g : c.groups) {
        auto bit = key.value(g.key_index);
        if (!bit) throw ValidationError("reference key leaves bit " + std::to_string(g.key_index) + " unresolved");
        truth[g.links[*bit ? 1 : 0]] = true;
    }
    return truth;
}

/// A locked design from the attacker's own library, labelled by the key the attacker chose.
struct LibraryDesign {
    AttackGraph graph;
    CandidateSet candidates;
    std::vector<bool> truth;  // per candidate link
};

struct DatasetOptions {
    std::size_t h = 2;
    std::uint32_t drnl_cap = kDefaultDrnlCap;
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;
    std::size_t max_observable = 0;  // cap on observable-link positives per graph, 0 = all
    std::size_t max_nodes_per_hop = 0;
    std::size_t threads = 1;
};

struct Dataset {
    Scenario scenario = Scenario::SelfReferencing;
    std::size_t h = 2;
    std::uint32_t drnl_cap = kDefaultDrnlCap;
    std::vector<EnclosingSubgraph> train, validation, test;
};

namespace detail {

struct LinkJob {
    const AttackGraph* graph;
    GraphIndex u, v;
    std::optional<bool> label;
};

/// Observable edges as positives plus as many sampled non-edges as negatives.
inline void observable_jobs(const AttackGraph& g, const CandidateSet& c, std::size_t cap, Rng& rng,
                            std::vector<LinkJob>& jobs) {
    auto edges = g.edges();
    shuffle(std::span(edges), rng);
    if (cap && edges.size() > cap) edges.resize(cap);
    std::set<std::pair<GraphIndex, GraphIndex>> taken;
    for (const CandidateLink& l : c.links) taken.emplace(std::min(l.driver, l.gate), std::max(l.driver, l.gate));
    for (auto [u, v] : edges) jobs.push_back({&g, u, v, true});
    const std::size_t want = edges.size();
    std::size_t found = 0;
    for (std::size_t tries = 0; found < want && tries < 100 * want + 1000; ++tries) {
        auto u = static_cast<GraphIndex>(uniform_index(rng, g.size()));
        auto v = static_cast<GraphIndex>(uniform_index(rng, g.size()));
        if (u == v || g.has_edge(u, v)) continue;
        if (!taken.emplace(std::min(u, v), std::max(u, v)).second) continue;
        jobs.push_back({&g, u, v, false});
        ++found;
    }
}

inline std::vector<EnclosingSubgraph> extract_all(const std::vector<LinkJob>& jobs, const DatasetOptions& opt) {
    std::vector<EnclosingSubgraph> out(jobs.size());
    parallel_for(jobs.size(), opt.threads, [&](std::size_t i) {
        const LinkJob& j = jobs[i];
        out[i] = extract_enclosing_subgraph(*j.graph, j.u, j.v, opt.h, opt.drnl_cap, opt.max_nodes_per_hop);
        out[i].label = j.label;
    });
    return out;
}

}  // namespace detail

/// Test samples, one per candidate link, in candidate order.
inline std::vector<EnclosingSubgraph> candidate_samples(const AttackGraph& g, const CandidateSet& c, std::size_t h,
                                                        std::uint32_t drnl_cap = kDefaultDrnlCap,
                                                        std::size_t max_nodes_per_hop = 0, std::size_t threads = 1) {
    std::vector<detail::LinkJob> jobs;
    for (const CandidateLink& l : c.links) jobs.push_back({&g, l.driver, l.gate, std::nullopt});
    DatasetOptions opt;
    opt.h = h;
    opt.drnl_cap = drnl_cap;
    opt.max_nodes_per_hop = max_nodes_per_hop;
    opt.threads = threads;
    return detail::extract_all(jobs, opt);
}

/// Builds the sample sets for one target design.
///
/// Self-referencing: the target's observable links are positives, an equal number of sampled
/// non-links are negatives. Circuit library: the same is mined from every library design, and
/// the library's candidate links are added with their known labels.
inline Dataset build_dataset(const AttackGraph& target, const CandidateSet& target_candidates, Scenario scenario,
                             std::span<const LibraryDesign> library, const DatasetOptions& opt = {}) {
    if (scenario == Scenario::CircuitLibrary && library.empty())
        throw ValidationError("circuit-library scenario needs at least one library design");
    if (opt.validation_fraction < 0 || opt.validation_fraction >= 1)
        throw ValidationError("validation fraction must lie in [0, 1)");
    Rng rng(opt.seed);
    std::vector<detail::LinkJob> jobs;
    if (target.edge_count() == 0) throw ValidationError("target graph has no observable links to learn from");
    detail::observable_jobs(target, target_candidates, opt.max_observable, rng, jobs);
    if (scenario == Scenario::CircuitLibrary) {
        for (const LibraryDesign& d : library) {
            if (d.truth.size() != d.candidates.links.size())
                throw ValidationError("library design truth does not cover its candidate links");
            detail::observable_jobs(d.graph, d.candidates, opt.max_observable, rng, jobs);
            for (std::size_t i = 0; i < d.candidates.links.size(); ++i) {
                const CandidateLink& l = d.candidates.links[i];
                jobs.push_back({&d.graph, l.driver, l.gate, static_cast<bool>(d.truth[i])});
            }
        }
    }
    shuffle(std::span(jobs), rng);

    Dataset ds;
    ds.scenario = scenario;
    ds.h = opt.h;
    ds.drnl_cap = opt.drnl_cap;
    auto samples = detail::extract_all(jobs, opt);
    const auto n_val = static_cast<std::size_t>(opt.validation_fraction * static_cast<double>(samples.size()));
    ds.validation.assign(std::make_move_iterator(samples.end() - static_cast<std::ptrdiff_t>(n_val)),
                         std::make_move_iterator(samples.end()));
    samples.resize(samples.size() - n_val);
    ds.train = std::move(samples);
    ds.test = candidate_samples(target, target_candidates, opt.h, opt.drnl_cap, opt.max_nodes_per_hop, opt.threads);
    return ds;
}

// Serialization: a header, then per split a count and per sample
//   sample <nodes> <edges> <0|1|?>
//   <global> <slot> <flags> <drnl>     (one line per node)
//   <a> <b>                            (one line per edge, a < b)

inline void write_samples(const std::vector<EnclosingSubgraph>& samples, const char* split, std::ostream& out) {
    out << "split " << split << ' ' << samples.size() << "\n";
    for (const EnclosingSubgraph& s : samples) {
        out << "sample " << s.size() << ' ' << s.edge_count() << ' ' << (s.label ? (*s.label ? '1' : '0') : '?') << "\n";
        for (std::size_t i = 0; i < s.size(); ++i)
            out << s.nodes[i] << ' ' << int(s.slot[i]) << ' ' << int(s.flags[i]) << ' ' << s.labels[i] << "\n";
        for (std::uint32_t a = 0; a < s.adj.size(); ++a)
            for (std::uint32_t b : s.adj[a])
                if (a < b) out << a << ' ' << b << "\n";
    }
}

inline void write_dataset(const Dataset& ds, std::ostream& out) {
    out << "# relink dataset v1\n";
    out << "scenario " << scenario_name(ds.scenario) << " h " << ds.h << " drnl_cap " << ds.drnl_cap << "\n";
    write_samples(ds.train, "train", out);
    write_samples(ds.validation, "validation", out);
    write_samples(ds.test, "test", out);
}

inline std::string write_dataset(const Dataset& ds) {
    std::ostringstream out;
    write_dataset(ds, out);
    return out.str();
}

inline Dataset parse_dataset(std::istream& in) {
    std::size_t line_no = 0;
    std::string line;
    auto next = [&]() -> std::istringstream {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line[0] != '#') return std::istringstream(line);
        }
        throw ParseError(line_no, "unexpected end of dataset");
    };
    auto fail = [&](const char* what) { throw ParseError(line_no, what); };
    Dataset ds;
    {
        auto s = next();
        std::string w1, scen, w2, w3;
        if (!(s >> w1 >> scen >> w2 >> ds.h >> w3 >> ds.drnl_cap) || w1 != "scenario" || w2 != "h" || w3 != "drnl_cap")
            fail("bad dataset header");
        try {
            ds.scenario = scenario_from_name(scen);
        } catch (const ValidationError&) {
            fail("unknown scenario");
        }
    }
    for (auto* split : {&ds.train, &ds.validation, &ds.test}) {
        auto s = next();
        std::string w, name;
        std::size_t count = 0;
        if (!(s >> w >> name >> count) || w != "split") fail("expected a split header");
        split->resize(count);
        for (EnclosingSubgraph& g : *split) {
            auto h = next();
            std::size_t n = 0, e = 0;
            char label = 0;
            if (!(h >> w >> n >> e >> label) || w != "sample" || n < 2) fail("bad sample header");
            if (label == '1' || label == '0') g.label = label == '1';
            g.nodes.resize(n);
            g.slot.resize(n);
            g.flags.resize(n);
            g.labels.resize(n);
            g.adj.assign(n, {});
            for (std::size_t i = 0; i < n; ++i) {
                auto r = next();
                unsigned slot = 0, flags = 0;
                if (!(r >> g.nodes[i] >> slot >> flags >> g.labels[i]) || slot >= kFeatureGates.size() || flags > 3)
                    fail("bad node row");
                g.slot[i] = static_cast<std::uint8_t>(slot);
                g.flags[i] = static_cast<std::uint8_t>(flags);
            }
            for (std::size_t k = 0; k < e; ++k) {
                auto r = next();
                std::uint32_t a = 0, b = 0;
                if (!(r >> a >> b) || a >= n || b >= n || a == b) fail("bad edge row");
                g.adj[a].push_back(b);
                g.adj[b].push_back(a);
            }
            for (auto& a : g.adj) std::sort(a.begin(), a.end());
        }
    }
    return ds;
}

inline Dataset parse_dataset(const std::string& text) {
    std::istringstream in(text);
    return parse_dataset(in);
}

}  // namespace relink
