#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "relink/key.hpp"
#include "relink/netlist.hpp"

namespace relink {

using InputVector = std::vector<bool>;
using OutputVector = std::vector<bool>;

/// 64-pattern bit-parallel evaluator.
///
/// Key bits are substituted as constants first; a MUX2 whose select is a resolved key input
/// only depends on the chosen data input. Cycle detection runs on that reduced graph, so a
/// wrong-key loop that the applied key cuts is not an error.
class Simulator {
public:
    explicit Simulator(const Netlist& netlist, const KeyAssignment* key = nullptr) : netlist_(&netlist) {
        const std::size_t n = netlist.size();
        key_word_.assign(n, 0);
        std::vector<std::uint8_t> key_state(n, 0);  // 0 = not a key, 1 = resolved, 2 = unresolved
        for (std::size_t k = 0; k < netlist.key_inputs().size(); ++k) {
            NodeId id = netlist.key_inputs()[k];
            auto value = (key && k < key->size()) ? key->value(k) : std::nullopt;
            key_state[id] = value ? 1 : 2;
            key_word_[id] = (value && *value) ? ~std::uint64_t{0} : 0;
        }

        // Effective dependencies after key substitution.
        ops_.resize(n);
        std::vector<std::vector<NodeId>> deps(n);
        for (NodeId id = 0; id < n; ++id) {
            const Node& node = netlist.node(id);
            Op& op = ops_[id];
            op.function = node.function;
            op.kind = node.kind;
            if (!node.is_gate()) continue;
            std::vector<NodeId> fanin = node.fanin;
            if (node.function == GateFunction::Mux2 && key_state[fanin[0]] == 1) {
                NodeId chosen = key_word_[fanin[0]] ? fanin[2] : fanin[1];
                op.function = GateFunction::Buf;
                fanin = {chosen};
            }
            for (NodeId f : fanin)
                if (key_state[f] == 2)
                    throw UnresolvedKeyError("key input '" + netlist.node(f).name + "' has no value but drives '" +
                                             node.name + "'");
            op.fanin = fanin;
            deps[id] = std::move(fanin);
        }

        // Kahn's algorithm over the reduced graph.
        std::vector<std::uint32_t> pending(n, 0);
        std::vector<std::vector<NodeId>> users(n);
        for (NodeId id = 0; id < n; ++id) {
            pending[id] = static_cast<std::uint32_t>(deps[id].size());
            for (NodeId f : deps[id]) users[f].push_back(id);
        }
        std::vector<NodeId> ready;
        for (NodeId id = 0; id < n; ++id)
            if (pending[id] == 0) ready.push_back(id);
        order_.reserve(n);
        while (!ready.empty()) {
            NodeId id = ready.back();
            ready.pop_back();
            order_.push_back(id);
            for (NodeId u : users[id])
                if (--pending[u] == 0) ready.push_back(u);
        }
        if (order_.size() != n) {
            // Every unordered node has an unordered dependency; following them must revisit a node,
            // and the first revisited node lies on a cycle.
            NodeId v = 0;
            while (pending[v] == 0) ++v;
            std::vector<bool> seen(n, false);
            while (!seen[v]) {
                seen[v] = true;
                for (NodeId f : deps[v])
                    if (pending[f] != 0) {
                        v = f;
                        break;
                    }
            }
            throw CycleError(netlist.node(v).name);
        }
        // Evaluation only needs the gates; inputs are written directly.
        std::erase_if(order_, [&](NodeId id) { return !netlist.node(id).is_gate(); });
    }

    std::size_t input_count() const noexcept { return netlist_->inputs().size(); }
    std::size_t output_count() const noexcept { return netlist_->outputs().size(); }

    /// One 64-bit word per primary input in, one word per primary output out.
    std::vector<std::uint64_t> run(std::span<const std::uint64_t> input_words) const {
        if (input_words.size() != input_count()) throw ValidationError("input word count mismatch");
        std::vector<std::uint64_t> value(key_word_);
        for (std::size_t i = 0; i < input_words.size(); ++i) value[netlist_->inputs()[i]] = input_words[i];
        for (NodeId id : order_) value[id] = eval(ops_[id], value);
        std::vector<std::uint64_t> out(output_count());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = value[netlist_->outputs()[i]];
        return out;
    }

    OutputVector run(const InputVector& input) const {
        std::vector<std::uint64_t> words(input.size());
        for (std::size_t i = 0; i < input.size(); ++i) words[i] = input[i] ? 1 : 0;
        auto out_words = run(words);
        OutputVector out(out_words.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out_words[i] & 1) != 0;
        return out;
    }

private:
    struct Op {
        NodeKind kind = NodeKind::Gate;
        GateFunction function = GateFunction::Buf;
        std::vector<NodeId> fanin;
    };

    static std::uint64_t eval(const Op& op, const std::vector<std::uint64_t>& v) {
        const auto& in = op.fanin;
        std::uint64_t acc = 0;
        switch (op.function) {
            case GateFunction::Buf: return v[in[0]];
            case GateFunction::Not: return ~v[in[0]];
            case GateFunction::Mux2: return (~v[in[0]] & v[in[1]]) | (v[in[0]] & v[in[2]]);
            case GateFunction::And:
            case GateFunction::Nand:
                acc = ~std::uint64_t{0};
                for (NodeId f : in) acc &= v[f];
                return op.function == GateFunction::And ? acc : ~acc;
            case GateFunction::Or:
            case GateFunction::Nor:
                for (NodeId f : in) acc |= v[f];
                return op.function == GateFunction::Or ? acc : ~acc;
            case GateFunction::Xor:
            case GateFunction::Xnor:
                for (NodeId f : in) acc ^= v[f];
                return op.function == GateFunction::Xor ? acc : ~acc;
        }
        return 0;
    }

    const Netlist* netlist_;
    std::vector<Op> ops_;
    std::vector<NodeId> order_;
    std::vector<std::uint64_t> key_word_;
};

/// Single-pattern convenience wrapper.
inline OutputVector simulate(const Netlist& netlist, const InputVector& input,
                             const KeyAssignment* key = nullptr) {
    if (input.size() != netlist.inputs().size()) throw ValidationError("input vector length mismatch");
    return Simulator(netlist, key).run(input);
}

/// Input words for patterns [64*block, 64*block + 64) of an exhaustive sweep.
inline std::vector<std::uint64_t> exhaustive_input_words(std::size_t num_inputs, std::uint64_t block) {
    std::vector<std::uint64_t> words(num_inputs, 0);
    for (std::size_t i = 0; i < num_inputs; ++i) {
        std::uint64_t w = 0;
        for (unsigned j = 0; j < 64; ++j) {
            std::uint64_t pattern = block * 64 + j;
            if ((pattern >> i) & 1U) w |= std::uint64_t{1} << j;
        }
        words[i] = w;
    }
    return words;
}

/// Mask of valid lanes in block `block` of a 2^num_inputs exhaustive sweep.
inline std::uint64_t exhaustive_lane_mask(std::size_t num_inputs, std::uint64_t block) {
    const std::uint64_t total = std::uint64_t{1} << num_inputs;
    const std::uint64_t start = block * 64;
    if (start + 64 <= total) return ~std::uint64_t{0};
    return (std::uint64_t{1} << (total - start)) - 1;
}

inline std::uint64_t exhaustive_block_count(std::size_t num_inputs) {
    return ((std::uint64_t{1} << num_inputs) + 63) / 64;
}

/// Exhaustive equivalence of two designs over all 2^|PI| patterns (|PI| <= 24).
inline bool equivalent_exhaustive(const Netlist& a, const KeyAssignment* key_a, const Netlist& b,
                                  const KeyAssignment* key_b) {
    if (a.inputs().size() != b.inputs().size() || a.outputs().size() != b.outputs().size())
        throw ValidationError("port count mismatch");
    if (a.inputs().size() > 24) throw ValidationError("too many inputs for an exhaustive sweep");
    Simulator sa(a, key_a), sb(b, key_b);
    const std::size_t n = a.inputs().size();
    for (std::uint64_t block = 0; block < exhaustive_block_count(n); ++block) {
        auto words = exhaustive_input_words(n, block);
        auto mask = exhaustive_lane_mask(n, block);
        auto oa = sa.run(words), ob = sb.run(words);
        for (std::size_t i = 0; i < oa.size(); ++i)
            if ((oa[i] ^ ob[i]) & mask) return false;
    }
    return true;
}

}  // namespace relink
