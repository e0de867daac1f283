#pragma once

// Random and structured netlist generators used as test fixtures.

#include <cstdint>
#include <string>
#include <vector>

#include "relink/netlist.hpp"
#include "relink/random.hpp"

namespace relink::fixtures {

struct RandomNetlistOptions {
    std::size_t inputs = 10;
    std::size_t gates = 120;
    std::size_t outputs = 8;
    double wide_fraction = 0.05;     // share of 3-input gates
    double unary_fraction = 0.10;    // share of NOT/BUF
    std::size_t locality = 12;       // fanins prefer the most recent nodes
};

/// Layered random DAG. Fanins are drawn with a bias towards recently created nodes, which
/// yields long chains of 2-input gates.
inline Netlist random_netlist(std::uint64_t seed, const RandomNetlistOptions& opt = {}) {
    Rng rng(seed);
    Netlist n("random_" + std::to_string(seed));
    std::vector<NodeId> pool;
    for (std::size_t i = 0; i < opt.inputs; ++i) pool.push_back(n.add_input("pi" + std::to_string(i)));
    static constexpr GateFunction binary[] = {GateFunction::And, GateFunction::Nand, GateFunction::Or,
                                              GateFunction::Nor, GateFunction::Xor,  GateFunction::Xnor};
    auto pick = [&]() -> NodeId {
        if (pool.size() > opt.locality && uniform_real(rng) < 0.75)
            return pool[pool.size() - 1 - uniform_index(rng, opt.locality)];
        return pool[uniform_index(rng, pool.size())];
    };
    for (std::size_t g = 0; g < opt.gates; ++g) {
        double r = uniform_real(rng);
        std::vector<NodeId> fanin;
        GateFunction f;
        if (r < opt.unary_fraction) {
            f = coin(rng) ? GateFunction::Not : GateFunction::Buf;
            fanin = {pick()};
        } else {
            f = binary[uniform_index(rng, 6)];
            std::size_t width = r < opt.unary_fraction + opt.wide_fraction ? 3 : 2;
            while (fanin.size() < width) {
                NodeId c = pick();
                if (std::find(fanin.begin(), fanin.end(), c) == fanin.end()) fanin.push_back(c);
            }
        }
        pool.push_back(n.add_gate("g" + std::to_string(g), f, std::move(fanin)));
    }
    // Sinks become outputs first, then random gates until the requested count.
    auto fanouts = n.fanouts();
    std::vector<NodeId> outs;
    for (NodeId id = 0; id < n.size(); ++id)
        if (n.node(id).is_gate() && fanouts[id].empty()) outs.push_back(id);
    while (outs.size() < opt.outputs) {
        NodeId c = pool[opt.inputs + uniform_index(rng, opt.gates)];
        if (std::find(outs.begin(), outs.end(), c) == outs.end()) outs.push_back(c);
    }
    for (NodeId o : outs) n.add_output(o);
    return n;
}

/// A fixed 30-gate template with 6 inputs and 4 outputs, rich in 2-input chains.
struct TileTemplate {
    struct Gate {
        GateFunction function;
        std::vector<int> fanin;  // < 0: tile input -(i+1); >= 0: gate index
    };
    std::vector<Gate> gates;
    std::vector<int> outputs;  // gate indices
    std::size_t inputs = 6;
};

inline TileTemplate default_tile() {
    using G = GateFunction;
    TileTemplate t;
    t.gates = {
        {G::And, {-1, -2}},  {G::Or, {-3, -4}},   {G::Xor, {-5, -6}},  {G::Nand, {0, 1}},   {G::Nor, {1, 2}},
        {G::Not, {2}},       {G::And, {3, -1}},   {G::Or, {4, 5}},     {G::Xor, {6, -3}},   {G::Nand, {7, -2}},
        {G::And, {8, 9}},    {G::Or, {8, -6}},    {G::Nor, {9, 3}},    {G::Xnor, {10, 11}}, {G::And, {12, -4}},
        {G::Nand, {13, 6}},  {G::Or, {14, 7}},    {G::Not, {15}},      {G::And, {16, 17}},  {G::Xor, {15, 12}},
        {G::Nor, {18, 10}},  {G::Or, {19, 4}},    {G::And, {20, 21}},  {G::Nand, {22, 13}}, {G::Xor, {21, 16}},
        {G::Or, {23, 18}},   {G::And, {24, 25}},  {G::Nor, {26, 19}},  {G::Xnor, {27, 22}}, {G::Buf, {27}},
    };
    t.outputs = {25, 26, 28, 29};
    return t;
}

/// `tiles` copies of a template. Tile inputs come from primary inputs or, with probability
/// `chain_probability`, from outputs of earlier tiles, chosen at random per seed.
inline Netlist tiled_netlist(std::uint64_t seed, std::size_t tiles, const TileTemplate& tile = default_tile(),
                             std::size_t primary_inputs = 12, double chain_probability = 0.6) {
    Rng rng(seed);
    Netlist n("tiled_" + std::to_string(seed));
    std::vector<NodeId> pis;
    for (std::size_t i = 0; i < primary_inputs; ++i) pis.push_back(n.add_input("pi" + std::to_string(i)));
    std::vector<NodeId> available_outputs;
    std::vector<bool> consumed;
    for (std::size_t k = 0; k < tiles; ++k) {
        std::vector<NodeId> in(tile.inputs);
        for (std::size_t i = 0; i < tile.inputs; ++i) {
            NodeId chosen = kNoNode;
            if (!available_outputs.empty() && uniform_real(rng) < chain_probability) {
                std::size_t idx = uniform_index(rng, available_outputs.size());
                chosen = available_outputs[idx];
                consumed[idx] = true;
            } else {
                chosen = pis[uniform_index(rng, pis.size())];
            }
            // Keep fanins of a tile distinct so 2-input gates never see the same net twice.
            if (std::find(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(i), chosen) !=
                in.begin() + static_cast<std::ptrdiff_t>(i)) {
                for (NodeId p : pis)
                    if (std::find(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(i), p) ==
                        in.begin() + static_cast<std::ptrdiff_t>(i)) {
                        chosen = p;
                        break;
                    }
            }
            in[i] = chosen;
        }
        std::vector<NodeId> ids;
        for (std::size_t g = 0; g < tile.gates.size(); ++g) {
            std::vector<NodeId> fanin;
            for (int f : tile.gates[g].fanin) fanin.push_back(f < 0 ? in[static_cast<std::size_t>(-f - 1)] : ids[static_cast<std::size_t>(f)]);
            ids.push_back(n.add_gate("t" + std::to_string(k) + "_g" + std::to_string(g), tile.gates[g].function, fanin));
        }
        for (int o : tile.outputs) {
            available_outputs.push_back(ids[static_cast<std::size_t>(o)]);
            consumed.push_back(false);
        }
    }
    for (std::size_t i = 0; i < available_outputs.size(); ++i)
        if (!consumed[i] || i + tile.outputs.size() >= available_outputs.size()) n.add_output(available_outputs[i]);
    return n;
}

}  // namespace relink::fixtures
