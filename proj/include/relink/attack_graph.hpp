#pragma once

// Undirected gate graph of a locked design with the obfuscated links cut out, plus the
// candidate links those cuts leave behind.

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "relink/error.hpp"
#include "relink/lock_meta.hpp"
#include "relink/netlist.hpp"

namespace relink {

using GraphIndex = std::uint32_t;
inline constexpr GraphIndex kNoIndex = std::numeric_limits<GraphIndex>::max();

/// One-hot slots 0..7 (alphabetical), then has-PI-fanin and drives-PO.
inline constexpr std::size_t kFeatureWidth = 10;
inline constexpr std::array<GateFunction, 8> kFeatureGates = {
    GateFunction::And, GateFunction::Buf, GateFunction::Nand, GateFunction::Nor,
    GateFunction::Not, GateFunction::Or,  GateFunction::Xnor, GateFunction::Xor};

inline std::uint8_t feature_slot(GateFunction f) {
    for (std::size_t i = 0; i < kFeatureGates.size(); ++i)
        if (kFeatureGates[i] == f) return static_cast<std::uint8_t>(i);
    throw ValidationError("gate function " + std::string(gate_name(f)) + " has no feature slot");
}

struct GraphNode {
    std::string name;
    std::uint8_t slot = 0;  // index into kFeatureGates
    bool pi = false;
    bool po = false;
};

class AttackGraph {
public:
    GraphIndex add_node(GraphNode node) {
        index_.emplace(node.name, static_cast<GraphIndex>(nodes_.size()));
        nodes_.push_back(std::move(node));
        adj_.emplace_back();
        return static_cast<GraphIndex>(nodes_.size() - 1);
    }

    /// Adds an undirected edge; self loops and duplicates are ignored.
    bool add_edge(GraphIndex u, GraphIndex v) {
        if (u == v || has_edge(u, v)) return false;
        insert_sorted(adj_.at(u), v);
        insert_sorted(adj_.at(v), u);
        ++edge_count_;
        return true;
    }

    bool has_edge(GraphIndex u, GraphIndex v) const {
        const auto& a = adj_.at(u);
        return std::binary_search(a.begin(), a.end(), v);
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t edge_count() const noexcept { return edge_count_; }
    const GraphNode& node(GraphIndex i) const { return nodes_.at(i); }
    const std::vector<GraphIndex>& neighbors(GraphIndex i) const { return adj_[i]; }

    std::optional<GraphIndex> find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Each undirected edge once, as (smaller, larger), in ascending order.
    std::vector<std::pair<GraphIndex, GraphIndex>> edges() const {
        std::vector<std::pair<GraphIndex, GraphIndex>> out;
        out.reserve(edge_count_);
        for (GraphIndex u = 0; u < adj_.size(); ++u)
            for (GraphIndex v : adj_[u])
                if (u < v) out.emplace_back(u, v);
        return out;
    }

    std::array<float, kFeatureWidth> features(GraphIndex i) const {
        std::array<float, kFeatureWidth> x{};
        const GraphNode& n = nodes_.at(i);
        x[n.slot] = 1.0F;
        x[8] = n.pi ? 1.0F : 0.0F;
        x[9] = n.po ? 1.0F : 0.0F;
        return x;
    }

private:
    static void insert_sorted(std::vector<GraphIndex>& v, GraphIndex x) { v.insert(std::lower_bound(v.begin(), v.end(), x), x); }

    std::vector<GraphNode> nodes_;
    std::vector<std::vector<GraphIndex>> adj_;
    std::unordered_map<std::string, GraphIndex> index_;
    std::size_t edge_count_ = 0;
};

enum class GroupKind : std::uint8_t { Mux, SwitchBoxF1, SwitchBoxF2 };

inline std::string_view group_kind_name(GroupKind k) {
    switch (k) {
        case GroupKind::Mux: return "mux";
        case GroupKind::SwitchBoxF1: return "f1";
        default: return "f2";
    }
}

/// Driver-to-gate link that may or may not exist. Role 0 is the MUX data input selected by a
/// key bit of 0, role 1 the one selected by 1.
struct CandidateLink {
    GraphIndex driver = kNoIndex;
    GraphIndex gate = kNoIndex;
    std::size_t group = 0;
    std::uint8_t role = 0;
};

/// The two alternatives for one obfuscated gate input.
struct CandidateGroup {
    GroupKind kind = GroupKind::Mux;
    GraphIndex gate = kNoIndex;
    std::size_t key_index = 0;
    std::array<std::size_t, 2> links{};  // indices into CandidateSet::links, by role
    std::size_t switch_box = kNoSwitchBox;
    std::size_t sibling = kNoSwitchBox;  // the other gate's group in the same switch box

    static constexpr std::size_t kNoSwitchBox = std::numeric_limits<std::size_t>::max();
};

struct CandidateSet {
    std::size_t key_count = 0;
    std::vector<CandidateLink> links;
    std::vector<CandidateGroup> groups;
    std::vector<std::pair<std::size_t, bool>> fixed_bits;  // key bits implied by structure alone

    std::size_t add_group(GroupKind kind, GraphIndex gate, std::size_t key, GraphIndex driver0, GraphIndex driver1) {
        const std::size_t g = groups.size();
        CandidateGroup group{kind, gate, key, {links.size(), links.size() + 1}};
        links.push_back({driver0, gate, g, 0});
        links.push_back({driver1, gate, g, 1});
        groups.push_back(group);
        return g;
    }
};

struct GraphBuild {
    AttackGraph graph;
    CandidateSet candidates;
};

/// Converts an obfuscated design into the attack graph and its candidate links.
///
/// Random key MUXes and switch-box input MUXes become candidate pairs. Switch-box output
/// MUXes are collapsed onto their gate: every embedded gate must appear in its box's output,
/// which also fixes the shared output-select bit.
inline GraphBuild build_attack_graph(const ObfuscatedDesign& design) {
    const Netlist& n = design.netlist;
    const LockMeta& meta = design.meta;
    validate_meta(n, meta);

    // MUX nodes: which gate an output MUX stands for, and which MUXes are candidate sources.
    std::vector<NodeId> out_gate(n.size(), kNoNode);
    std::vector<bool> candidate_mux(n.size(), false);
    for (const SwitchBoxSite& s : meta.switch_boxes) {
        out_gate[s.out_i] = s.f1;
        out_gate[s.out_j] = s.f2;
        candidate_mux[s.mux_f1] = candidate_mux[s.mux_f2] = true;
    }
    for (const MuxSite& m : meta.muxes) candidate_mux[m.mux] = true;
    for (NodeId id = 0; id < n.size(); ++id) {
        const Node& node = n.node(id);
        if (node.is_gate() && node.function == GateFunction::Mux2 && out_gate[id] == kNoNode && !candidate_mux[id])
            throw ValidationError("MUX '" + node.name + "' is not described by the lock meta");
    }

    GraphBuild out;
    AttackGraph& g = out.graph;
    std::vector<GraphIndex> index(n.size(), kNoIndex);
    for (NodeId id = 0; id < n.size(); ++id) {
        const Node& node = n.node(id);
        if (node.is_gate() && node.function != GateFunction::Mux2)
            index[id] = g.add_node({node.name, feature_slot(node.function), false, false});
    }
    // The gate a signal stands for once output MUXes are collapsed.
    auto source_gate = [&](NodeId d) -> GraphIndex {
        if (out_gate[d] != kNoNode) return index[out_gate[d]];
        return index[d];
    };
    auto require_gate = [&](NodeId d, NodeId consumer) {
        GraphIndex i = source_gate(d);
        if (i == kNoIndex)
            throw ValidationError("candidate driver '" + n.node(d).name + "' of '" + n.node(consumer).name +
                                  "' is not a logic gate");
        return i;
    };

    // Observable wires, and the PI / PO flags. Real nodes keep mutable flags here.
    std::vector<bool> pi(g.size(), false), po(g.size(), false);
    for (NodeId id = 0; id < n.size(); ++id) {
        if (index[id] == kNoIndex) continue;
        for (NodeId d : n.node(id).fanin) {
            const Node& dn = n.node(d);
            if (dn.kind == NodeKind::Input) {
                pi[index[id]] = true;
            } else if (dn.is_gate() && !candidate_mux[d]) {
                GraphIndex s = source_gate(d);
                if (s != kNoIndex) g.add_edge(s, index[id]);
            }
        }
    }
    for (NodeId o : n.outputs()) {
        GraphIndex s = n.node(o).is_gate() ? source_gate(o) : kNoIndex;
        if (s != kNoIndex) po[s] = true;
    }
    {
        AttackGraph flagged;
        for (GraphIndex i = 0; i < g.size(); ++i) {
            GraphNode node = g.node(i);
            node.pi = pi[i];
            node.po = po[i];
            flagged.add_node(std::move(node));
        }
        for (auto [u, v] : g.edges()) flagged.add_edge(u, v);
        g = std::move(flagged);
    }

    CandidateSet& c = out.candidates;
    c.key_count = meta.key_count;
    for (const MuxSite& m : meta.muxes) {
        const auto& f = n.node(m.mux).fanin;
        c.add_group(GroupKind::Mux, index[m.consumer], m.key_index, require_gate(f[1], m.consumer),
                    require_gate(f[2], m.consumer));
    }
    for (std::size_t b = 0; b < meta.switch_boxes.size(); ++b) {
        const SwitchBoxSite& s = meta.switch_boxes[b];
        const auto& m1 = n.node(s.mux_f1).fanin;
        const auto& m2 = n.node(s.mux_f2).fanin;
        std::size_t g1 = c.add_group(GroupKind::SwitchBoxF1, index[s.f1], s.key[0], require_gate(m1[1], s.f1),
                                     require_gate(m1[2], s.f1));
        std::size_t g2 = c.add_group(GroupKind::SwitchBoxF2, index[s.f2], s.key[1], require_gate(m2[1], s.f2),
                                     require_gate(m2[2], s.f2));
        c.groups[g1].switch_box = c.groups[g2].switch_box = b;
        c.groups[g1].sibling = g2;
        c.groups[g2].sibling = g1;
        const auto& oi = n.node(s.out_i).fanin;
        const auto& oj = n.node(s.out_j).fanin;
        const bool bit_i = oi[2] == s.f1, bit_j = oj[2] == s.f2;
        if ((oi[1] == s.f1) == bit_i || (oj[1] == s.f2) == bit_j || bit_i != bit_j)
            throw ValidationError("switch-box outputs of '" + n.node(s.f1).name + "' cannot both pass their gates");
        c.fixed_bits.emplace_back(s.key[2], bit_i);
    }
    return out;
}

/// Graph of an unlocked netlist: every gate-to-gate wire is an edge, no candidates.
inline AttackGraph build_plain_graph(const Netlist& n) {
    return build_attack_graph(ObfuscatedDesign{n, LockMeta{LockScheme::RandomMux, n.key_inputs().size(), {}, {}, {}}})
        .graph;
}

/// Line-oriented container for a graph and its candidates.
inline void write_graph(const GraphBuild& b, std::ostream& out) {
    const AttackGraph& g = b.graph;
    out << "# relink attack graph v1\n";
    out << "nodes " << g.size() << "\n";
    for (GraphIndex i = 0; i < g.size(); ++i) {
        const GraphNode& n = g.node(i);
        out << n.name << ' ' << gate_name(kFeatureGates[n.slot]) << ' ' << int(n.pi) << ' ' << int(n.po) << "\n";
    }
    auto edges = g.edges();
    out << "edges " << edges.size() << "\n";
    for (auto [u, v] : edges) out << u << ' ' << v << "\n";
    const CandidateSet& c = b.candidates;
    out << "keys " << c.key_count << "\n";
    out << "groups " << c.groups.size() << "\n";
    for (const CandidateGroup& grp : c.groups) {
        out << group_kind_name(grp.kind) << ' ' << grp.gate << ' ' << grp.key_index << ' '
            << c.links[grp.links[0]].driver << ' ' << c.links[grp.links[1]].driver << ' ';
        if (grp.switch_box == CandidateGroup::kNoSwitchBox)
            out << "- -\n";
        else
            out << grp.switch_box << ' ' << grp.sibling << "\n";
    }
    out << "fixed " << c.fixed_bits.size() << "\n";
    for (auto [k, bit] : c.fixed_bits) out << k << ' ' << int(bit) << "\n";
}

inline std::string write_graph(const GraphBuild& b) {
    std::ostringstream out;
    write_graph(b, out);
    return out.str();
}

inline GraphBuild parse_graph(std::istream& in) {
    std::size_t line_no = 0;
    std::string line;
    auto next = [&]() -> std::istringstream {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line[0] != '#') return std::istringstream(line);
        }
        throw ParseError(line_no, "unexpected end of graph file");
    };
    auto header = [&](const char* word) {
        auto s = next();
        std::string w;
        std::size_t count = 0;
        if (!(s >> w >> count) || w != word) throw ParseError(line_no, std::string("expected '") + word + " <count>'");
        return count;
    };
    auto fail = [&]() { throw ParseError(line_no, "malformed graph record"); };

    GraphBuild b;
    const std::size_t n_nodes = header("nodes");
    for (std::size_t i = 0; i < n_nodes; ++i) {
        auto s = next();
        std::string name, fn;
        int pi = 0, po = 0;
        if (!(s >> name >> fn >> pi >> po)) fail();
        auto f = gate_from_name(fn);
        if (!f || *f == GateFunction::Mux2) fail();
        b.graph.add_node({name, feature_slot(*f), pi != 0, po != 0});
    }
    auto check = [&](std::size_t idx) {
        if (idx >= n_nodes) throw ParseError(line_no, "node index out of range");
        return static_cast<GraphIndex>(idx);
    };
    const std::size_t n_edges = header("edges");
    for (std::size_t i = 0; i < n_edges; ++i) {
        auto s = next();
        std::size_t u = 0, v = 0;
        if (!(s >> u >> v)) fail();
        b.graph.add_edge(check(u), check(v));
    }
    CandidateSet& c = b.candidates;
    c.key_count = header("keys");
    const std::size_t n_groups = header("groups");
    for (std::size_t i = 0; i < n_groups; ++i) {
        auto s = next();
        std::string kind, box, sib;
        std::size_t gate = 0, key = 0, d0 = 0, d1 = 0;
        if (!(s >> kind >> gate >> key >> d0 >> d1 >> box >> sib)) fail();
        GroupKind k = kind == "mux" ? GroupKind::Mux : kind == "f1" ? GroupKind::SwitchBoxF1 : GroupKind::SwitchBoxF2;
        if (kind != "mux" && kind != "f1" && kind != "f2") fail();
        if (key >= c.key_count) throw ParseError(line_no, "key index out of range");
        std::size_t g = c.add_group(k, check(gate), key, check(d0), check(d1));
        if (box != "-") {
            try {
                c.groups[g].switch_box = std::stoull(box);
                c.groups[g].sibling = std::stoull(sib);
            } catch (const std::exception&) {
                fail();
            }
        }
    }
    for (const CandidateGroup& grp : c.groups)
        if (grp.switch_box != CandidateGroup::kNoSwitchBox && grp.sibling >= c.groups.size())
            throw ParseError(line_no, "sibling group out of range");
    const std::size_t n_fixed = header("fixed");
    for (std::size_t i = 0; i < n_fixed; ++i) {
        auto s = next();
        std::size_t k = 0;
        int bit = 0;
        if (!(s >> k >> bit) || k >= c.key_count) fail();
        c.fixed_bits.emplace_back(k, bit != 0);
    }
    return b;
}

inline GraphBuild parse_graph(const std::string& text) {
    std::istringstream in(text);
    return parse_graph(in);
}

}  // namespace relink
