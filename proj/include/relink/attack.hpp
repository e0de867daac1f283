#pragma once

// Oracle-less key recovery from link predictions.
//
// Only the obfuscated design (netlist + lock meta), its attack graph and a trained model are
// visible here; the reference key never is.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relink/attack_graph.hpp"
#include "relink/error.hpp"
#include "relink/gnn.hpp"
#include "relink/key.hpp"
#include "relink/lock_meta.hpp"
#include "relink/netlist.hpp"
#include "relink/parallel.hpp"
#include "relink/subgraph.hpp"

namespace relink {

struct AttackOptions {
    std::size_t threads = 1;
    std::size_t max_nodes_per_hop = 0;
    std::size_t max_iterations = 1000;
    double threshold_epsilon = 1e-9;
    double tie_epsilon = 1e-6;
    std::size_t late_hops = 3;  // scoring hop count once links are accepted, and in the ensemble
};

/// One pass over the undecided gates.
struct IterationRecord {
    std::size_t iteration = 0;
    double th = 0, up = 1;
    std::size_t h = 2;
    bool ensemble = false;
    std::string event;                  // accept, conflict, relax, ensemble, done
    std::vector<std::size_t> accepted;  // candidate link ids accepted in this pass
    std::size_t links_left = 0;         // links still undecided after the pass
};

struct AttackReport {
    LockScheme scheme = LockScheme::RandomMux;
    std::size_t key_count = 0;
    std::size_t solved_bits = 0;
    std::vector<IterationRecord> iterations;
    std::vector<std::size_t> accepted_links;  // all accepted links, in acceptance order
    bool hit_iteration_cap = false;
    double seconds = 0;
};

struct AttackResult {
    KeyAssignment key;
    AttackReport report;
};

/// Likelihood of each listed candidate link in `graph` at hop count h.
using LinkScorer =
    std::function<std::vector<double>(const AttackGraph& graph, std::span<const std::size_t> links, std::size_t h)>;

namespace detail {

inline void check_candidates(const AttackGraph& g, const CandidateSet& c) {
    for (std::size_t i = 0; i < c.groups.size(); ++i) {
        const CandidateGroup& grp = c.groups[i];
        if (grp.key_index >= c.key_count) throw ValidationError("candidate group key index out of range");
        for (std::size_t r = 0; r < 2; ++r) {
            if (grp.links[r] >= c.links.size()) throw ValidationError("candidate group refers to a missing link");
            const CandidateLink& l = c.links[grp.links[r]];
            if (l.group != i || l.role != r || l.gate != grp.gate)
                throw ValidationError("candidate link does not match its group");
            if (l.driver >= g.size() || l.gate >= g.size()) throw ValidationError("candidate link outside the graph");
        }
        if (grp.sibling != CandidateGroup::kNoSwitchBox) {
            if (grp.sibling >= c.groups.size() || c.groups[grp.sibling].sibling != i)
                throw ValidationError("switch-box siblings are not paired");
        }
    }
}

inline void check_model(const GnnModel& model) {
    if (model.config().input_width() != kFeatureWidth + model.config().drnl_cap + 1)
        throw ShapeError("model input width does not match the graph features");
}

/// Scores of `links` in the current graph at hop count h.
inline std::vector<double> score_links(const GnnModel& model, const AttackGraph& g, const CandidateSet& c,
                                       std::span<const std::size_t> links, std::size_t h, const AttackOptions& opt) {
    std::vector<double> out(links.size());
    const auto cap = static_cast<std::uint32_t>(model.config().drnl_cap);
    parallel_for(links.size(), opt.threads, [&](std::size_t i) {
        const CandidateLink& l = c.links[links[i]];
        out[i] = model.forward(extract_enclosing_subgraph(g, l.driver, l.gate, h, cap, opt.max_nodes_per_hop));
    });
    return out;
}

inline LinkScorer model_scorer(const GnnModel& model, const CandidateSet& c, const AttackOptions& opt) {
    check_model(model);
    return [&model, &c, opt](const AttackGraph& g, std::span<const std::size_t> links, std::size_t h) {
        return score_links(model, g, c, links, h, opt);
    };
}

inline void apply_fixed_bits(const CandidateSet& c, KeyAssignment& key) {
    for (auto [index, bit] : c.fixed_bits) key[index] = key_bit(bit);
}

}  // namespace detail

/// Independent pairwise decision per key MUX: the higher-scored link is the true wire.
inline AttackResult attack_random_mux(const AttackGraph& graph, const CandidateSet& candidates,
                                      const LinkScorer& scorer, const AttackOptions& opt = {}) {
    const auto start = std::chrono::steady_clock::now();
    detail::check_candidates(graph, candidates);
    AttackResult result{KeyAssignment(candidates.key_count), {}};
    result.report.scheme = LockScheme::RandomMux;
    result.report.key_count = candidates.key_count;

    std::vector<std::size_t> links(candidates.links.size());
    std::iota(links.begin(), links.end(), std::size_t{0});
    auto scores = scorer(graph, links, 2);
    if (scores.size() != links.size()) throw ValidationError("scorer returned the wrong number of scores");

    IterationRecord rec;
    rec.iteration = 1;
    rec.th = 0;
    rec.up = 0;
    rec.event = "accept";
    for (const CandidateGroup& grp : candidates.groups) {
        const double a = scores[grp.links[0]], b = scores[grp.links[1]];
        if (std::abs(a - b) <= opt.tie_epsilon) {
            rec.links_left += 2;
            continue;
        }
        const std::size_t role = b > a ? 1 : 0;
        result.key[grp.key_index] = key_bit(role == 1);
        rec.accepted.push_back(grp.links[role]);
    }
    detail::apply_fixed_bits(candidates, result.key);
    result.report.accepted_links = rec.accepted;
    result.report.iterations.push_back(std::move(rec));
    result.report.solved_bits = result.key.resolved_count();
    result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

/// Iterative, confidence-gated network completion for routing-block locking.
///
/// Thresholds live on a 0.1 grid and are held as integer tenths. A conflict is a gate whose
/// filtered choice contradicts a link already fixed for it in the same pass, i.e. both gates of a
/// switch box claiming the same stage input.
inline AttackResult attack_interlock(const AttackGraph& graph, const CandidateSet& candidates,
                                     const LinkScorer& scorer, const AttackOptions& opt = {}) {
    const auto start = std::chrono::steady_clock::now();
    detail::check_candidates(graph, candidates);
    if (opt.late_hops == 0) throw ValidationError("hop count must be at least 1");
    AttackResult result{KeyAssignment(candidates.key_count), {}};
    AttackReport& report = result.report;
    report.scheme = LockScheme::InterLock;
    report.key_count = candidates.key_count;

    AttackGraph g = graph;
    const std::size_t n_groups = candidates.groups.size();
    std::vector<std::optional<std::uint8_t>> decided(n_groups);
    std::vector<std::size_t> pending(n_groups);
    std::iota(pending.begin(), pending.end(), std::size_t{0});

    int th = 0, up = 10;  // tenths
    std::size_t h = 2;
    bool ensemble = false, done = false;
    const double eps = opt.threshold_epsilon;
    std::size_t iteration = 0;

    // The sibling's role that uses the stage input not taken by `driver`.
    auto complement_role = [&](std::size_t group, GraphIndex driver) -> std::optional<std::uint8_t> {
        const CandidateGroup& grp = candidates.groups[group];
        const GraphIndex d0 = candidates.links[grp.links[0]].driver, d1 = candidates.links[grp.links[1]].driver;
        if (d0 == d1) return std::nullopt;
        if (d0 == driver) return std::uint8_t{1};
        if (d1 == driver) return std::uint8_t{0};
        return std::nullopt;
    };

    while (!done && !pending.empty()) {
        // Restart: score every remaining link.
        std::vector<std::size_t> links;
        for (std::size_t grp : pending)
            for (std::size_t l : candidates.groups[grp].links) links.push_back(l);
        std::vector<double> score(candidates.links.size(), 0);
        {
            auto s = scorer(g, links, ensemble || h == 2 ? 2 : opt.late_hops);
            if (s.size() != links.size()) throw ValidationError("scorer returned the wrong number of scores");
            if (ensemble) {
                auto s3 = scorer(g, links, opt.late_hops);
                for (std::size_t i = 0; i < s.size(); ++i) s[i] = (s[i] + s3[i]) / 2;
            }
            for (std::size_t i = 0; i < links.size(); ++i) score[links[i]] = s[i];
        }

        bool rescore = false;
        while (!rescore && !done) {
            // Restart-I: one filtering pass at the current thresholds.
            if (++iteration > opt.max_iterations) {
                report.hit_iteration_cap = true;
                done = true;
                break;
            }
            IterationRecord rec;
            rec.iteration = iteration;
            rec.th = th / 10.0;
            rec.up = up / 10.0;
            rec.h = ensemble ? 3 : h;
            rec.ensemble = ensemble;

            std::vector<std::optional<std::uint8_t>> chosen(n_groups);
            std::vector<std::size_t> order;  // groups in acceptance order
            bool conflict = false, restart_pass = false;
            for (std::size_t grp : pending) {
                const CandidateGroup& cg = candidates.groups[grp];
                const double la = score[cg.links[0]], lb = score[cg.links[1]];
                const double diff = std::abs(la - lb);
                if (std::max(la, lb) < up / 10.0 - eps) continue;
                if (diff < th / 10.0 - eps || diff <= opt.tie_epsilon) continue;
                const std::uint8_t role = lb > la ? 1 : 0;
                std::optional<std::uint8_t> sib_role;
                if (cg.sibling != CandidateGroup::kNoSwitchBox && !decided[cg.sibling]) {
                    sib_role = complement_role(cg.sibling, candidates.links[cg.links[role]].driver);
                    if (!sib_role) continue;
                }
                const bool clash = (chosen[grp] && *chosen[grp] != role) ||
                                   (sib_role && chosen[cg.sibling] && *chosen[cg.sibling] != *sib_role);
                if (!clash) {
                    if (!chosen[grp]) order.push_back(grp);
                    chosen[grp] = role;
                    if (sib_role && !chosen[cg.sibling]) {
                        chosen[cg.sibling] = sib_role;
                        order.push_back(cg.sibling);
                    }
                    continue;
                }
                conflict = true;
                if (h == 2 && th != up && !ensemble) {
                    th = std::min(th + 1, up);
                    rec.event = "conflict";
                    restart_pass = true;
                    break;
                }
                if (ensemble) {
                    // Terminal: the disputed switch box stays undecided.
                    done = true;
                    chosen[grp].reset();
                    if (cg.sibling != CandidateGroup::kNoSwitchBox) chosen[cg.sibling].reset();
                    std::erase_if(order, [&](std::size_t x) { return !chosen[x]; });
                    continue;
                }
                ensemble = true;
                th = up = 10;
                rec.event = "ensemble";
                rescore = true;
                break;
            }
            if (restart_pass || rescore) {
                rec.links_left = 2 * pending.size();
                report.iterations.push_back(std::move(rec));
                continue;
            }

            if (!order.empty()) {
                if (h == 2) {
                    h = 3;
                    th = std::min(10, up);
                }
                for (std::size_t grp : order) {
                    const std::size_t link = candidates.groups[grp].links[*chosen[grp]];
                    decided[grp] = chosen[grp];
                    g.add_edge(candidates.links[link].driver, candidates.links[link].gate);
                    rec.accepted.push_back(link);
                    report.accepted_links.push_back(link);
                }
                std::erase_if(pending, [&](std::size_t grp) { return decided[grp].has_value(); });
                rec.event = conflict ? "done" : "accept";
                rescore = true;
            } else if (conflict) {
                rec.event = "done";
            } else if (up == 0 && th == 0) {
                rec.event = "done";
                done = true;
            } else {
                if (2 * th >= up) {
                    th -= 1;
                } else {
                    up -= 1;
                    th = up;
                }
                rec.event = "relax";
            }
            rec.links_left = 2 * pending.size();
            report.iterations.push_back(std::move(rec));
        }
    }

    for (std::size_t grp = 0; grp < n_groups; ++grp)
        if (decided[grp]) result.key[candidates.groups[grp].key_index] = key_bit(*decided[grp] == 1);
    detail::apply_fixed_bits(candidates, result.key);
    report.solved_bits = result.key.resolved_count();
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

inline AttackResult attack_random_mux(const AttackGraph& graph, const CandidateSet& candidates, const GnnModel& model,
                                      const AttackOptions& opt = {}) {
    return attack_random_mux(graph, candidates, detail::model_scorer(model, candidates, opt), opt);
}

inline AttackResult attack_interlock(const AttackGraph& graph, const CandidateSet& candidates, const GnnModel& model,
                                     const AttackOptions& opt = {}) {
    return attack_interlock(graph, candidates, detail::model_scorer(model, candidates, opt), opt);
}

/// Dispatches on the lock scheme.
inline AttackResult run_attack(LockScheme scheme, const AttackGraph& graph, const CandidateSet& candidates,
                               const GnnModel& model, const AttackOptions& opt = {}) {
    return scheme == LockScheme::InterLock ? attack_interlock(graph, candidates, model, opt)
                                           : attack_random_mux(graph, candidates, model, opt);
}

/// Collapses every key MUX whose select bit is resolved onto the selected data input.
///
/// MUXes on unresolved bits stay in place. All key inputs are kept so key indices remain valid;
/// resolved ones are left without fanout.
inline Netlist reconstruct_design(const ObfuscatedDesign& design, const KeyAssignment& key) {
    const Netlist& n = design.netlist;
    if (key.size() != n.key_inputs().size()) throw ValidationError("key size does not match the design");
    std::vector<std::optional<bool>> key_of(n.size());
    for (std::size_t i = 0; i < n.key_inputs().size(); ++i) key_of[n.key_inputs()[i]] = key.value(i);

    // Where each signal really comes from once resolved MUXes are bypassed.
    std::vector<NodeId> target(n.size());
    std::iota(target.begin(), target.end(), NodeId{0});
    std::vector<bool> dropped(n.size(), false);
    for (NodeId id = 0; id < n.size(); ++id) {
        const Node& node = n.node(id);
        if (!node.is_gate() || node.function != GateFunction::Mux2) continue;
        const auto& bit = key_of[node.fanin[0]];
        if (!bit) continue;
        target[id] = node.fanin[*bit ? 2 : 1];
        dropped[id] = true;
    }
    auto resolve = [&](NodeId id) {
        std::size_t steps = 0;
        while (target[id] != id) {
            id = target[id];
            if (++steps > n.size()) throw ValidationError("resolved key MUXes form a loop");
        }
        return id;
    };

    Netlist out(n.name());
    std::vector<NodeId> map(n.size(), kNoNode);
    std::vector<std::size_t> key_index(n.size(), SIZE_MAX);
    for (std::size_t i = 0; i < n.key_inputs().size(); ++i) key_index[n.key_inputs()[i]] = i;
    for (NodeId id = 0; id < n.size(); ++id) {
        const Node& node = n.node(id);
        if (dropped[id]) continue;
        switch (node.kind) {
            case NodeKind::Input: map[id] = out.add_input(node.name); break;
            case NodeKind::KeyInput: map[id] = out.add_key_input(key_index[id], node.name); break;
            default: map[id] = out.add_gate(node.name, node.function, std::vector<NodeId>(node.fanin.size(), kNoNode));
        }
    }
    for (NodeId id = 0; id < n.size(); ++id) {
        if (dropped[id] || !n.node(id).is_gate()) continue;
        const auto& fanin = n.node(id).fanin;
        for (std::size_t p = 0; p < fanin.size(); ++p) out.set_fanin(map[id], p, map[resolve(fanin[p])]);
    }
    for (NodeId o : n.outputs()) out.add_output(map[resolve(o)]);
    return out;
}

}  // namespace relink
