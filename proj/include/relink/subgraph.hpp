#pragma once

// h-hop enclosing subgraphs with double-radius node labels.

#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "relink/attack_graph.hpp"
#include "relink/error.hpp"

namespace relink {

inline constexpr std::uint32_t kUnreachable = std::numeric_limits<std::uint32_t>::max();
inline constexpr std::uint32_t kDefaultDrnlCap = 50;

/// 1 + min(du, dv) + (d/2) * ((d/2) + (d%2) - 1) with d = du + dv; 0 if either is unreachable.
inline std::uint32_t drnl_label(std::uint32_t du, std::uint32_t dv) {
    if (du == kUnreachable || dv == kUnreachable) return 0;
    const std::uint64_t d = std::uint64_t{du} + dv;
    const std::uint64_t half = d / 2;
    const std::uint64_t label = 1 + std::min(du, dv) + half * (half + d % 2 - 1);
    return label > std::numeric_limits<std::uint32_t>::max() ? 0 : static_cast<std::uint32_t>(label);
}

struct EnclosingSubgraph {
    std::vector<GraphIndex> nodes;                    // nodes[0], nodes[1] are the targets
    std::vector<std::vector<std::uint32_t>> adj;      // local, sorted
    std::vector<std::uint8_t> slot;                   // gate-function slot per node
    std::vector<std::uint8_t> flags;                  // bit 0: PI, bit 1: PO
    std::vector<std::uint32_t> labels;                // DRNL, capped
    std::optional<bool> label;                        // link exists (training only)

    std::size_t size() const noexcept { return nodes.size(); }
    std::size_t edge_count() const {
        std::size_t e = 0;
        for (const auto& a : adj) e += a.size();
        return e / 2;
    }
};

namespace detail {

/// BFS distances over local adjacency, never entering `blocked`.
inline std::vector<std::uint32_t> local_distances(const std::vector<std::vector<std::uint32_t>>& adj,
                                                  std::uint32_t from, std::uint32_t blocked) {
    std::vector<std::uint32_t> dist(adj.size(), kUnreachable);
    std::deque<std::uint32_t> queue{from};
    dist[from] = 0;
    while (!queue.empty()) {
        std::uint32_t x = queue.front();
        queue.pop_front();
        for (std::uint32_t y : adj[x]) {
            if (y == blocked || dist[y] != kUnreachable) continue;
            dist[y] = dist[x] + 1;
            queue.push_back(y);
        }
    }
    return dist;
}

}  // namespace detail

/// Labels every node by its masked distances to the two targets (local indices 0 and 1).
///
/// d(., u) is measured with v removed and vice versa. Targets get 1; labels above `cap`
/// fall into bucket 0.
inline std::vector<std::uint32_t> drnl_labels(const std::vector<std::vector<std::uint32_t>>& adj,
                                              std::uint32_t cap = kDefaultDrnlCap) {
    auto du = detail::local_distances(adj, 0, 1);
    auto dv = detail::local_distances(adj, 1, 0);
    std::vector<std::uint32_t> labels(adj.size());
    for (std::size_t i = 0; i < adj.size(); ++i) {
        std::uint32_t l = i < 2 ? 1 : drnl_label(du[i], dv[i]);
        labels[i] = l > cap ? 0 : l;
    }
    return labels;
}

/// Induced subgraph on all nodes within `h` hops of u or v, with the (u, v) edge removed.
///
/// Node order is u, v, then breadth-first discovery order with neighbours visited in index
/// order. `max_nodes_per_hop` (0 = unlimited) keeps the first nodes of each ring in that order.
inline EnclosingSubgraph extract_enclosing_subgraph(const AttackGraph& g, GraphIndex u, GraphIndex v,
                                                    std::size_t h, std::uint32_t drnl_cap = kDefaultDrnlCap,
                                                    std::size_t max_nodes_per_hop = 0) {
    if (u == v) throw ValidationError("enclosing subgraph needs two distinct targets");
    if (h == 0) throw ValidationError("hop count must be at least 1");
    if (u >= g.size() || v >= g.size()) throw ValidationError("target outside the graph");

    EnclosingSubgraph s;
    std::unordered_map<GraphIndex, std::uint32_t> local;
    auto add = [&](GraphIndex x) {
        local.emplace(x, static_cast<std::uint32_t>(s.nodes.size()));
        s.nodes.push_back(x);
    };
    add(u);
    add(v);
    std::vector<GraphIndex> ring{u, v};
    for (std::size_t hop = 1; hop <= h && !ring.empty(); ++hop) {
        std::vector<GraphIndex> next;
        for (GraphIndex x : ring)
            for (GraphIndex y : g.neighbors(x)) {
                if (local.count(y)) continue;
                if (max_nodes_per_hop && next.size() >= max_nodes_per_hop) break;
                add(y);
                next.push_back(y);
            }
        ring = std::move(next);
    }

    s.adj.resize(s.nodes.size());
    for (std::uint32_t i = 0; i < s.nodes.size(); ++i) {
        for (GraphIndex y : g.neighbors(s.nodes[i])) {
            auto it = local.find(y);
            if (it == local.end()) continue;
            if ((i == 0 && it->second == 1) || (i == 1 && it->second == 0)) continue;
            s.adj[i].push_back(it->second);
        }
        std::sort(s.adj[i].begin(), s.adj[i].end());
    }
    s.slot.resize(s.nodes.size());
    s.flags.resize(s.nodes.size());
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        const GraphNode& n = g.node(s.nodes[i]);
        s.slot[i] = n.slot;
        s.flags[i] = static_cast<std::uint8_t>((n.pi ? 1 : 0) | (n.po ? 2 : 0));
    }
    s.labels = drnl_labels(s.adj, drnl_cap);
    return s;
}

}  // namespace relink
