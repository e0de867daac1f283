#include <gtest/gtest.h>

#include <map>
#include <fstream>
#include <set>

#include "relink/bench.hpp"
#include "relink/key.hpp"
#include "relink/simulate.hpp"
#include "support/generators.hpp"

using namespace relink;

namespace {

// Canonical form keyed by names: isomorphism up to node ids.
std::map<std::string, std::pair<std::string, std::vector<std::string>>> canonical(const Netlist& n) {
    std::map<std::string, std::pair<std::string, std::vector<std::string>>> out;
    for (const Node& node : n.nodes()) {
        std::vector<std::string> fanin;
        for (NodeId f : node.fanin) fanin.push_back(n.node(f).name);
        std::string kind = node.kind == NodeKind::Input ? "in" : node.kind == NodeKind::KeyInput ? "key" : std::string(gate_name(node.function));
        out[node.name] = {kind, fanin};
    }
    return out;
}

std::vector<std::string> port_names(const Netlist& n, const std::vector<NodeId>& ids) {
    std::vector<std::string> names;
    for (NodeId id : ids) names.push_back(n.node(id).name);
    return names;
}

}  // namespace

TEST(Bench, ParsesMinimalCircuit) {
    Netlist n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a,b)");
    EXPECT_EQ(n.inputs().size(), 2u);
    EXPECT_EQ(n.outputs().size(), 1u);
    EXPECT_EQ(n.gate_count(), 1u);
    EXPECT_EQ(n.node(n.id_of("y")).function, GateFunction::And);
}

TEST(Bench, ArityMismatchIsReported) {
    try {
        parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a)");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST(Bench, SyntaxAndReferenceErrors) {
    EXPECT_THROW(parse_bench("INPUT(a)\nOUTPUT(y)\ny = AND(a, zz)"), ParseError);
    EXPECT_THROW(parse_bench("INPUT(a)\nOUTPUT(y)\ny = FOO(a, a)"), ParseError);
    EXPECT_THROW(parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)\ny = OR(a, b)"), ParseError);
    EXPECT_THROW(parse_bench("INPUT(a)\nthis is not bench"), ParseError);
    EXPECT_THROW(parse_bench("INPUT(a)\nOUTPUT(nothere)"), ParseError);
}

TEST(Bench, CaseInsensitiveGatesAndForwardReferences) {
    Netlist n = parse_bench("# comment\nINPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = nand(t, b)\nt = buff(a)\n");
    EXPECT_EQ(n.node(n.id_of("y")).function, GateFunction::Nand);
    EXPECT_EQ(n.node(n.id_of("t")).function, GateFunction::Buf);
}

TEST(Bench, WritesFourLinesForOneAnd) {
    Netlist n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a,b)");
    std::istringstream text(write_bench(n));
    int lines = 0;
    for (std::string line; std::getline(text, line);)
        if (!line.empty() && line[0] != '#') ++lines;
    EXPECT_EQ(lines, 4);
}

TEST(Bench, MuxUsesExtensionSyntax) {
    Netlist n = parse_bench("INPUT(a)\nINPUT(b)\nINPUT(keyinput0)\nOUTPUT(y)\ny = MUX(keyinput0, a, b)");
    EXPECT_EQ(n.key_inputs().size(), 1u);
    EXPECT_NE(write_bench(n).find("y = MUX(keyinput0, a, b)"), std::string::npos);
}

TEST(Bench, RoundTripOnGeneratedNetlists) {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Netlist n = fixtures::random_netlist(seed, {.inputs = 4 + seed % 9, .gates = 20 + 3 * seed});
        Netlist back = parse_bench(write_bench(n));
        EXPECT_EQ(canonical(n), canonical(back)) << "seed " << seed;
        EXPECT_EQ(port_names(n, n.inputs()), port_names(back, back.inputs()));
        EXPECT_EQ(port_names(n, n.outputs()), port_names(back, back.outputs()));
    }
}

TEST(Bench, ShippedBenchmarksParse) {
    for (const char* name : {"c432", "c880", "c1908", "c3540", "c5315", "c7552", "b20_C", "b22_C"}) {
        std::ifstream in(std::string(RELINK_SOURCE_DIR) + "/benchmarks/" + name + ".bench");
        ASSERT_TRUE(in) << name;
        Netlist n = parse_bench(in, name);
        EXPECT_GT(n.gate_count(), 100u) << name;
        EXPECT_TRUE(check_acyclic(n).acyclic) << name;
    }
}

TEST(KeyFile, RoundTripAndErrors) {
    KeyAssignment k(4);
    k[0] = KeyBit::One;
    k[2] = KeyBit::Zero;
    EXPECT_EQ(k.to_string(), "1X0X");
    EXPECT_EQ(parse_key(write_key(k)), k);
    EXPECT_THROW(parse_key("k0=1\nk2=0\n"), ParseError);
    EXPECT_THROW(parse_key("k0=1\nk0=0\n"), ParseError);
    EXPECT_THROW(parse_key("k0=2\n"), ParseError);
}

TEST(Simulate, GateSemantics) {
    Netlist n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a,b)");
    EXPECT_EQ(simulate(n, {false, true}), OutputVector{false});
    Netlist x = parse_bench("INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(y)\nt = XOR(a,b)\ny = XOR(t,c)");
    EXPECT_EQ(simulate(x, {true, true, true}), OutputVector{true});
}

TEST(Simulate, KeyedMuxAndUnresolvedKey) {
    Netlist n = parse_bench("INPUT(a)\nINPUT(b)\nINPUT(keyinput0)\nOUTPUT(y)\ny = MUX(keyinput0, a, b)");
    KeyAssignment k(1, KeyBit::One);
    EXPECT_EQ(simulate(n, {false, true}, &k), OutputVector{true});
    k[0] = KeyBit::Zero;
    EXPECT_EQ(simulate(n, {false, true}, &k), OutputVector{false});
    EXPECT_THROW(simulate(n, {false, true}), UnresolvedKeyError);
}

TEST(Simulate, CycleCutByKeyIsNotAnError) {
    // m0 and m1 feed each other's data inputs; the key picks the acyclic choice.
    const char* text =
        "INPUT(a)\nINPUT(b)\nINPUT(keyinput0)\nINPUT(keyinput1)\nOUTPUT(y)\n"
        "m0 = MUX(keyinput0, a, m1)\nm1 = MUX(keyinput1, b, m0)\ny = AND(m0, m1)\n";
    Netlist n = parse_bench(text);
    auto r = check_acyclic(n);
    ASSERT_FALSE(r.acyclic);
    EXPECT_EQ(std::set<NodeId>(r.cycle.begin(), r.cycle.end()), (std::set<NodeId>{n.id_of("m0"), n.id_of("m1")}));
    KeyAssignment ok(2, KeyBit::Zero);
    EXPECT_EQ(simulate(n, {true, true}, &ok), OutputVector{true});
    KeyAssignment bad(2, KeyBit::One);
    try {
        simulate(n, {true, true}, &bad);
        FAIL() << "expected a cycle error";
    } catch (const CycleError& e) {
        EXPECT_TRUE(e.member() == "m0" || e.member() == "m1");
    }
}

TEST(Simulate, CycleWitnessFollowsSignalFlow) {
    Netlist n = parse_bench("INPUT(a)\nOUTPUT(y)\np = AND(a, r)\nq = OR(p, a)\nr = NOT(q)\ny = BUFF(r)\n");
    auto r = check_acyclic(n);
    ASSERT_FALSE(r.acyclic);
    ASSERT_EQ(r.cycle.size(), 3u);
    for (std::size_t i = 0; i < r.cycle.size(); ++i) {
        NodeId from = r.cycle[i], to = r.cycle[(i + 1) % r.cycle.size()];
        const auto& f = n.node(to).fanin;
        EXPECT_NE(std::find(f.begin(), f.end(), from), f.end());
    }
}

TEST(Simulate, BitParallelMatchesSinglePattern) {
    Netlist n = fixtures::random_netlist(7, {.inputs = 8, .gates = 60});
    Simulator sim(n);
    for (std::uint64_t block = 0; block < exhaustive_block_count(8); ++block) {
        auto words = exhaustive_input_words(8, block);
        auto out = sim.run(words);
        for (unsigned lane = 0; lane < 64; ++lane) {
            InputVector in(8);
            for (std::size_t i = 0; i < 8; ++i) in[i] = (words[i] >> lane) & 1U;
            auto single = sim.run(in);
            for (std::size_t o = 0; o < out.size(); ++o) ASSERT_EQ(single[o], ((out[o] >> lane) & 1U) != 0);
        }
    }
}

TEST(Simulate, ExhaustiveLaneMask) {
    EXPECT_EQ(exhaustive_block_count(3), 1u);
    EXPECT_EQ(exhaustive_lane_mask(3, 0), 0xFFu);
    EXPECT_EQ(exhaustive_lane_mask(10, 3), ~std::uint64_t{0});
}
