#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "relink/attack_graph.hpp"
#include "relink/bench.hpp"
#include "relink/dataset.hpp"
#include "relink/locking.hpp"
#include "relink/subgraph.hpp"
#include "support/generators.hpp"

using namespace relink;

namespace {

Netlist load(const std::string& name) {
    std::ifstream in(std::string(RELINK_SOURCE_DIR) + "/benchmarks/" + name + ".bench");
    return parse_bench(in, name);
}

using Edge = std::pair<std::string, std::string>;

Edge edge_key(std::string a, std::string b) { return a < b ? Edge{a, b} : Edge{b, a}; }

// Gate-to-gate wires of an unlocked netlist, undirected, by name.
std::set<Edge> wire_relation(const Netlist& n) {
    std::set<Edge> out;
    for (const Node& node : n.nodes())
        if (node.is_gate())
            for (NodeId f : node.fanin)
                if (n.node(f).is_gate() && n.node(f).name != node.name) out.insert(edge_key(n.node(f).name, node.name));
    return out;
}

std::set<Edge> graph_relation(const AttackGraph& g) {
    std::set<Edge> out;
    for (auto [u, v] : g.edges()) out.insert(edge_key(g.node(u).name, g.node(v).name));
    return out;
}

AttackGraph random_graph(Rng& rng, std::size_t n, double p) {
    AttackGraph g;
    for (std::size_t i = 0; i < n; ++i) g.add_node({"n" + std::to_string(i), static_cast<std::uint8_t>(i % 8), false, false});
    for (GraphIndex u = 0; u < n; ++u)
        for (GraphIndex v = u + 1; v < n; ++v)
            if (uniform_real(rng) < p) g.add_edge(u, v);
    return g;
}

// All-pairs shortest paths on local adjacency with one node deleted (Floyd-Warshall).
std::vector<std::vector<std::uint32_t>> apsp(const std::vector<std::vector<std::uint32_t>>& adj, std::uint32_t removed) {
    const std::size_t n = adj.size();
    const std::uint32_t inf = kUnreachable;
    std::vector<std::vector<std::uint32_t>> d(n, std::vector<std::uint32_t>(n, inf));
    for (std::uint32_t i = 0; i < n; ++i) {
        if (i == removed) continue;
        d[i][i] = 0;
        for (std::uint32_t j : adj[i])
            if (j != removed) d[i][j] = 1;
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (d[i][k] != inf && d[k][j] != inf && d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
    return d;
}

std::uint32_t label_by_formula(std::uint32_t du, std::uint32_t dv) {
    if (du == kUnreachable || dv == kUnreachable) return 0;
    std::uint32_t d = du + dv;
    return 1 + std::min(du, dv) + (d / 2) * ((d / 2) + (d % 2) - 1);
}

}  // namespace

TEST(AttackGraph, UnlockedDesignIsItsWireRelation) {
    Netlist n = load("c432");
    GraphBuild b = build_attack_graph(ObfuscatedDesign{n, LockMeta{}});
    EXPECT_TRUE(b.candidates.links.empty());
    EXPECT_EQ(graph_relation(b.graph), wire_relation(n));
    EXPECT_EQ(b.graph.size(), n.gate_count());
    for (GraphIndex u = 0; u < b.graph.size(); ++u)
        for (GraphIndex v : b.graph.neighbors(u)) {
            EXPECT_NE(u, v);
            EXPECT_TRUE(b.graph.has_edge(v, u));
        }
}

TEST(AttackGraph, FeatureLayout) {
    Netlist n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\nt = XOR(a, b)\ny = NOT(t)\n");
    AttackGraph g = build_plain_graph(n);
    auto t = g.features(*g.find("t"));
    auto y = g.features(*g.find("y"));
    EXPECT_EQ(t[7], 1.0F);  // XOR is last alphabetically
    EXPECT_EQ(t[8], 1.0F);
    EXPECT_EQ(t[9], 0.0F);
    EXPECT_EQ(y[4], 1.0F);
    EXPECT_EQ(y[8], 0.0F);
    EXPECT_EQ(y[9], 1.0F);
    EXPECT_EQ(kFeatureWidth, 10u);
}

TEST(AttackGraph, RandomMuxCandidates) {
    Netlist n = fixtures::random_netlist(4, {.inputs = 12, .gates = 200});
    LockedDesign d = lock_random_mux(n, 16, 4);
    GraphBuild b = build_attack_graph(d.design);
    ASSERT_EQ(b.candidates.groups.size(), 16u);
    ASSERT_EQ(b.candidates.links.size(), 32u);
    auto truth = candidate_truth(b.candidates, d.correct_key);
    for (std::size_t gi = 0; gi < 16; ++gi) {
        const CandidateGroup& g = b.candidates.groups[gi];
        const MuxKeyGate& m = d.mux_gates[gi];
        EXPECT_EQ(truth[g.links[0]] + truth[g.links[1]], 1);
        const CandidateLink& t = b.candidates.links[truth[g.links[0]] ? g.links[0] : g.links[1]];
        EXPECT_EQ(b.graph.node(t.driver).name, n.node(m.true_wire).name);
        EXPECT_EQ(b.graph.node(t.gate).name, n.node(m.consumer).name);
    }
    // Every wire except the cut ones survives.
    auto original = wire_relation(n);
    auto present = graph_relation(b.graph);
    std::size_t missing = 0;
    for (const Edge& e : original) missing += !present.count(e);
    EXPECT_LE(missing, 16u);
    for (const Edge& e : present) EXPECT_TRUE(original.count(e));
}

TEST(AttackGraph, InterLockCandidatesAndFixedBits) {
    Netlist n = load("b20_C");
    LockedDesign d = lock_interlock(n, 1, 8, 3);
    GraphBuild b = build_attack_graph(d.design);
    const CandidateSet& c = b.candidates;
    EXPECT_EQ(c.links.size(), 64u);
    EXPECT_EQ(c.groups.size(), 32u);
    EXPECT_EQ(c.fixed_bits.size(), 16u);
    for (auto [k, bit] : c.fixed_bits) EXPECT_EQ(d.correct_key.value(k), bit);

    // The true link of each gate is its predecessor on the embedded path.
    std::map<std::string, std::string> predecessor;
    for (const TimingPath& p : d.keyrbs[0].embedded_paths)
        for (std::size_t t = 0; t < p.gates.size(); ++t)
            predecessor[n.node(p.gates[t]).name] = n.node(t == 0 ? p.source : p.gates[t - 1]).name;
    auto truth = candidate_truth(c, d.correct_key);
    std::size_t true_links = 0;
    for (const CandidateGroup& g : c.groups) {
        ASSERT_EQ(truth[g.links[0]] + truth[g.links[1]], 1);
        const CandidateLink& t = c.links[truth[g.links[0]] ? g.links[0] : g.links[1]];
        EXPECT_EQ(b.graph.node(t.driver).name, predecessor.at(b.graph.node(g.gate).name));
        ++true_links;
        // Both gates of a box share the candidate drivers.
        const CandidateGroup& s = c.groups[g.sibling];
        std::set<GraphIndex> mine{c.links[g.links[0]].driver, c.links[g.links[1]].driver};
        std::set<GraphIndex> theirs{c.links[s.links[0]].driver, c.links[s.links[1]].driver};
        EXPECT_EQ(mine, theirs);
        EXPECT_EQ(s.switch_box, g.switch_box);
    }
    EXPECT_EQ(true_links, 32u);
}

TEST(AttackGraph, MostLinksSurviveOneKeyRB8) {
    Netlist n = load("c7552");
    LockedDesign d = lock_interlock(n, 1, 8, 1);
    GraphBuild b = build_attack_graph(d.design);
    auto original = wire_relation(n);
    auto present = graph_relation(b.graph);
    std::size_t kept = 0;
    for (const Edge& e : original) kept += present.count(e);
    double frac = static_cast<double>(kept) / static_cast<double>(original.size());
    EXPECT_GT(frac, 0.99);
    EXPECT_LT(frac, 1.0);
}

TEST(AttackGraph, MetaMismatchIsRejected) {
    LockedDesign d = lock_random_mux(fixtures::random_netlist(2), 4, 2);
    ObfuscatedDesign broken = d.design;
    broken.meta.muxes.pop_back();
    EXPECT_THROW(build_attack_graph(broken), ValidationError);
    broken = d.design;
    broken.meta.key_count = 7;
    EXPECT_THROW(build_attack_graph(broken), ValidationError);
}

TEST(AttackGraph, FileRoundTrip) {
    LockedDesign d = lock_interlock(load("b20_C"), 1, 8, 5);
    GraphBuild b = build_attack_graph(d.design);
    std::string text = write_graph(b);
    GraphBuild back = parse_graph(text);
    EXPECT_EQ(write_graph(back), text);
    EXPECT_THROW(parse_graph("nodes 1\nx AND 0 0\nedges 1\n0 3\n"), ParseError);
}

TEST(Drnl, FormulaExamples) {
    EXPECT_EQ(drnl_label(1, 1), 2u);
    EXPECT_EQ(drnl_label(1, 2), 3u);
    EXPECT_EQ(drnl_label(kUnreachable, 1), 0u);
    EXPECT_EQ(drnl_label(2, kUnreachable), 0u);
    for (std::uint32_t a = 0; a < 12; ++a)
        for (std::uint32_t b = 0; b < 12; ++b) EXPECT_EQ(drnl_label(a, b), label_by_formula(a, b));
}

TEST(Drnl, TargetsGetOne) {
    AttackGraph g;
    for (int i = 0; i < 4; ++i) g.add_node({"n" + std::to_string(i), 0, false, false});
    g.add_edge(0, 2);
    g.add_edge(2, 1);
    g.add_edge(1, 3);
    auto s = extract_enclosing_subgraph(g, 0, 1, 2);
    EXPECT_EQ(s.labels[0], 1u);
    EXPECT_EQ(s.labels[1], 1u);
}

TEST(Drnl, MatchesFloydWarshallOracle) {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        std::size_t n = 2 + uniform_index(rng, 49);
        AttackGraph g = random_graph(rng, n, 0.02 + 0.2 * uniform_real(rng));
        GraphIndex u = static_cast<GraphIndex>(uniform_index(rng, n)), v = u;
        while (v == u) v = static_cast<GraphIndex>(uniform_index(rng, n));
        auto s = extract_enclosing_subgraph(g, u, v, 1 + uniform_index(rng, 3), 1000);
        auto du = apsp(s.adj, 1), dv = apsp(s.adj, 0);
        for (std::size_t i = 2; i < s.size(); ++i) ASSERT_EQ(s.labels[i], label_by_formula(du[0][i], dv[1][i]));
    }
}

TEST(Drnl, CapBucketsToZero) {
    std::vector<std::vector<std::uint32_t>> path(12);
    for (std::uint32_t i = 2; i + 1 < 12; ++i) {
        path[i].push_back(i + 1);
        path[i + 1].push_back(i);
    }
    path[0].push_back(2);
    path[2].push_back(0);
    path[1].push_back(11);
    path[11].push_back(1);
    auto labels = drnl_labels(path, 10);
    for (auto l : labels) EXPECT_LE(l, 10u);
    auto full = drnl_labels(path, 1000);
    for (std::size_t i = 0; i < labels.size(); ++i) EXPECT_EQ(labels[i], full[i] > 10 ? 0u : full[i]);
}

TEST(Drnl, PermutationInvariant) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        AttackGraph g = random_graph(rng, 30, 0.1);
        std::vector<GraphIndex> perm(30);
        for (GraphIndex i = 0; i < 30; ++i) perm[i] = i;
        shuffle(std::span(perm), rng);
        AttackGraph p;
        std::vector<GraphIndex> inv(30);
        for (GraphIndex i = 0; i < 30; ++i) inv[perm[i]] = i;
        for (GraphIndex i = 0; i < 30; ++i) p.add_node(g.node(inv[i]));
        for (auto [a, b] : g.edges()) p.add_edge(perm[a], perm[b]);
        auto s1 = extract_enclosing_subgraph(g, 3, 7, 2);
        auto s2 = extract_enclosing_subgraph(p, perm[3], perm[7], 2);
        std::multiset<std::uint32_t> l1(s1.labels.begin(), s1.labels.end()), l2(s2.labels.begin(), s2.labels.end());
        EXPECT_EQ(l1, l2);
    }
}

TEST(Subgraph, PathNeighbourhood) {
    AttackGraph g;
    for (const char* name : {"a", "u", "v", "b", "c"}) g.add_node({name, 0, false, false});
    g.add_edge(0, 1);
    g.add_edge(1, 2);
    g.add_edge(2, 3);
    g.add_edge(3, 4);
    auto s = extract_enclosing_subgraph(g, 1, 2, 1);
    EXPECT_EQ(s.size(), 4u);
    EXPECT_EQ(s.nodes[0], 1u);
    EXPECT_EQ(s.nodes[1], 2u);
    EXPECT_TRUE(std::find(s.adj[0].begin(), s.adj[0].end(), 1u) == s.adj[0].end());
    EXPECT_EQ(s.edge_count(), 2u);
}

TEST(Subgraph, StarAtTwoHops) {
    AttackGraph g;
    for (int i = 0; i < 9; ++i) g.add_node({"s" + std::to_string(i), 0, false, false});
    for (GraphIndex i = 1; i < 9; ++i) g.add_edge(0, i);
    auto s = extract_enclosing_subgraph(g, 0, 1, 2);
    EXPECT_EQ(s.size(), 9u);
    auto leaf = extract_enclosing_subgraph(g, 2, 5, 2);
    EXPECT_EQ(leaf.size(), 9u);
}

TEST(Subgraph, IsolatedTargets) {
    AttackGraph g;
    g.add_node({"x", 0, false, false});
    g.add_node({"y", 0, false, false});
    auto s = extract_enclosing_subgraph(g, 0, 1, 3);
    EXPECT_EQ(s.size(), 2u);
    EXPECT_THROW(extract_enclosing_subgraph(g, 0, 0, 1), ValidationError);
    EXPECT_THROW(extract_enclosing_subgraph(g, 0, 1, 0), ValidationError);
}

TEST(Subgraph, MatchesBfsOracleOnLockedBenchmark) {
    LockedDesign d = lock_random_mux(load("c1908"), 64, 3);
    GraphBuild b = build_attack_graph(d.design);
    const AttackGraph& g = b.graph;
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const CandidateLink& l = b.candidates.links[uniform_index(rng, b.candidates.links.size())];
        for (std::size_t h : {1u, 2u, 3u}) {
            // Separate plain BFS from each target.
            std::set<GraphIndex> expected;
            for (GraphIndex root : {l.driver, l.gate}) {
                std::map<GraphIndex, std::size_t> dist{{root, 0}};
                std::vector<GraphIndex> frontier{root};
                while (!frontier.empty()) {
                    std::vector<GraphIndex> next;
                    for (GraphIndex x : frontier)
                        for (GraphIndex y : g.neighbors(x))
                            if (!dist.count(y) && dist[x] + 1 <= h) {
                                dist[y] = dist[x] + 1;
                                next.push_back(y);
                            }
                    frontier = next;
                }
                for (auto [x, dx] : dist) expected.insert(x);
            }
            auto s = extract_enclosing_subgraph(g, l.driver, l.gate, h);
            EXPECT_EQ(std::set<GraphIndex>(s.nodes.begin(), s.nodes.end()), expected);
            // Induced edges, target link excluded.
            std::size_t edges = 0;
            for (GraphIndex x : expected)
                for (GraphIndex y : g.neighbors(x))
                    if (x < y && expected.count(y) && !((x == l.driver && y == l.gate) || (x == l.gate && y == l.driver))) ++edges;
            EXPECT_EQ(s.edge_count(), edges);
        }
        auto s2 = extract_enclosing_subgraph(g, l.driver, l.gate, 2);
        auto s3 = extract_enclosing_subgraph(g, l.driver, l.gate, 3);
        std::set<GraphIndex> n3(s3.nodes.begin(), s3.nodes.end());
        for (GraphIndex x : s2.nodes) EXPECT_TRUE(n3.count(x));
    }
}

TEST(Dataset, SelfReferencingCounts) {
    LockedDesign d = lock_random_mux(load("c880"), 32, 1);
    GraphBuild b = build_attack_graph(d.design);
    Dataset ds = build_dataset(b.graph, b.candidates, Scenario::SelfReferencing, {});
    std::size_t pos = 0, neg = 0;
    for (const auto* split : {&ds.train, &ds.validation})
        for (const EnclosingSubgraph& s : *split) (*s.label ? pos : neg)++;
    EXPECT_EQ(pos, b.graph.edge_count());
    EXPECT_EQ(neg, b.graph.edge_count());
    EXPECT_EQ(ds.validation.size(), (pos + neg) / 10);
    EXPECT_EQ(ds.test.size(), 64u);
    for (const EnclosingSubgraph& s : ds.train) {
        // Positives never see their own link; negatives are real non-links.
        EXPECT_TRUE(std::find(s.adj[0].begin(), s.adj[0].end(), 1u) == s.adj[0].end());
        if (!*s.label) EXPECT_FALSE(b.graph.has_edge(s.nodes[0], s.nodes[1]));
        else EXPECT_TRUE(b.graph.has_edge(s.nodes[0], s.nodes[1]));
    }
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
        EXPECT_FALSE(ds.test[i].label.has_value());
        EXPECT_EQ(ds.test[i].nodes[0], b.candidates.links[i].driver);
    }
}

TEST(Dataset, CircuitLibraryAddsObfuscatedLinks) {
    auto make = [](std::uint64_t seed) {
        LockedDesign d = lock_interlock(fixtures::random_netlist(seed, {.inputs = 12, .gates = 220}), 1, 8, seed);
        GraphBuild b = build_attack_graph(d.design);
        return LibraryDesign{b.graph, b.candidates, candidate_truth(b.candidates, d.correct_key)};
    };
    std::vector<LibraryDesign> lib{make(11), make(12), make(13)};
    LibraryDesign target = make(14);
    DatasetOptions opt;
    opt.validation_fraction = 0;
    Dataset ds = build_dataset(target.graph, target.candidates, Scenario::CircuitLibrary, lib, opt);
    std::size_t pos = 0, neg = 0, edges = target.graph.edge_count();
    for (const auto& l : lib) edges += l.graph.edge_count();
    for (const EnclosingSubgraph& s : ds.train) (*s.label ? pos : neg)++;
    EXPECT_EQ(pos, edges + 96);
    EXPECT_EQ(neg, edges + 96);
    EXPECT_THROW(build_dataset(target.graph, target.candidates, Scenario::CircuitLibrary, {}), ValidationError);
}

TEST(Dataset, NoObservableEdges) {
    AttackGraph g;
    g.add_node({"a", 0, false, false});
    g.add_node({"b", 0, false, false});
    EXPECT_THROW(build_dataset(g, CandidateSet{}, Scenario::SelfReferencing, {}), ValidationError);
}

TEST(Dataset, SerializationRoundTrip) {
    LockedDesign d = lock_random_mux(load("c432"), 8, 1);
    GraphBuild b = build_attack_graph(d.design);
    DatasetOptions opt;
    opt.seed = 3;
    Dataset ds = build_dataset(b.graph, b.candidates, Scenario::SelfReferencing, {}, opt);
    std::string text = write_dataset(ds);
    EXPECT_EQ(write_dataset(parse_dataset(text)), text);
    // Deterministic per seed, including with extraction threads.
    opt.threads = 3;
    EXPECT_EQ(write_dataset(build_dataset(b.graph, b.candidates, Scenario::SelfReferencing, {}, opt)), text);
}
