#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "relink/error.hpp"

namespace relink {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

enum class GateFunction : std::uint8_t { And, Nand, Or, Nor, Xor, Xnor, Not, Buf, Mux2 };

inline constexpr std::array<GateFunction, 9> kAllGateFunctions = {
    GateFunction::And, GateFunction::Nand, GateFunction::Or,  GateFunction::Nor, GateFunction::Xor,
    GateFunction::Xnor, GateFunction::Not, GateFunction::Buf, GateFunction::Mux2};

inline std::string_view gate_name(GateFunction f) {
    switch (f) {
        case GateFunction::And: return "AND";
        case GateFunction::Nand: return "NAND";
        case GateFunction::Or: return "OR";
        case GateFunction::Nor: return "NOR";
        case GateFunction::Xor: return "XOR";
        case GateFunction::Xnor: return "XNOR";
        case GateFunction::Not: return "NOT";
        case GateFunction::Buf: return "BUFF";
        case GateFunction::Mux2: return "MUX";
    }
    return "?";
}

/// Case-insensitive lookup of a BENCH gate keyword. `BUF` and `BUFF` both map to Buf.
inline std::optional<GateFunction> gate_from_name(std::string_view name) {
    std::string upper(name);
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (upper == "BUF") return GateFunction::Buf;
    if (upper == "MUX2") return GateFunction::Mux2;
    for (GateFunction f : kAllGateFunctions)
        if (gate_name(f) == upper) return f;
    return std::nullopt;
}

inline bool arity_ok(GateFunction f, std::size_t n) {
    switch (f) {
        case GateFunction::Not:
        case GateFunction::Buf: return n == 1;
        case GateFunction::Mux2: return n == 3;
        default: return n >= 2;
    }
}

/// True for the symmetric 2-input gates that can be embedded into a switch box.
inline bool is_two_input_logic(GateFunction f, std::size_t n) {
    return n == 2 && f != GateFunction::Mux2 && f != GateFunction::Not && f != GateFunction::Buf;
}

enum class NodeKind : std::uint8_t { Input, KeyInput, Gate };

struct Node {
    std::string name;
    NodeKind kind = NodeKind::Gate;
    GateFunction function = GateFunction::Buf;
    std::vector<NodeId> fanin;  // MUX2: select, in0, in1

    bool is_gate() const noexcept { return kind == NodeKind::Gate; }
};

/// Key inputs are recognised by this name prefix followed by their index.
inline constexpr std::string_view kKeyInputPrefix = "keyinput";

inline std::optional<std::size_t> key_index_from_name(std::string_view name) {
    if (!name.starts_with(kKeyInputPrefix) || name.size() == kKeyInputPrefix.size()) return std::nullopt;
    std::size_t value = 0;
    for (char c : name.substr(kKeyInputPrefix.size())) {
        if (c < '0' || c > '9') return std::nullopt;
        value = value * 10 + static_cast<std::size_t>(c - '0');
    }
    return value;
}

inline std::string key_input_name(std::size_t index) {
    return std::string(kKeyInputPrefix) + std::to_string(index);
}

/// Directed gate-level circuit. Primary inputs and key inputs are nodes without fanin.
///
/// Key inputs are kept apart from the primary inputs so that input vectors only cover the
/// functional inputs; `key_inputs()[i]` is the node carrying key bit `i`.
class Netlist {
public:
    Netlist() = default;
    explicit Netlist(std::string name) : name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::span<const Node> nodes() const noexcept { return nodes_; }

    const std::vector<NodeId>& inputs() const noexcept { return inputs_; }
    const std::vector<NodeId>& outputs() const noexcept { return outputs_; }
    const std::vector<NodeId>& key_inputs() const noexcept { return key_inputs_; }

    std::optional<NodeId> find(std::string_view name) const {
        auto it = by_name_.find(std::string(name));
        if (it == by_name_.end()) return std::nullopt;
        return it->second;
    }

    NodeId id_of(std::string_view name) const {
        auto id = find(name);
        if (!id) throw ValidationError("unknown signal '" + std::string(name) + "'");
        return *id;
    }

    NodeId add_input(std::string name) {
        NodeId id = add_node(std::move(name), NodeKind::Input, GateFunction::Buf, {});
        inputs_.push_back(id);
        return id;
    }

    /// Adds key input `index`; the node is named `keyinput<index>` unless a name is given.
    NodeId add_key_input(std::size_t index, std::string name = {}) {
        if (name.empty()) name = key_input_name(index);
        NodeId id = add_node(std::move(name), NodeKind::KeyInput, GateFunction::Buf, {});
        if (key_inputs_.size() <= index) key_inputs_.resize(index + 1, kNoNode);
        if (key_inputs_[index] != kNoNode)
            throw ValidationError("duplicate key input index " + std::to_string(index));
        key_inputs_[index] = id;
        return id;
    }

    NodeId add_gate(std::string name, GateFunction function, std::vector<NodeId> fanin) {
        if (!arity_ok(function, fanin.size()))
            throw ValidationError("arity mismatch for " + std::string(gate_name(function)) + " gate '" +
                                  name + "' with " + std::to_string(fanin.size()) + " inputs");
        for (NodeId f : fanin)
            if (f >= nodes_.size() && f != kNoNode)
                throw ValidationError("gate '" + name + "' references an undeclared node");
        return add_node(std::move(name), NodeKind::Gate, function, std::move(fanin));
    }

    void add_output(NodeId id) {
        if (id >= nodes_.size()) throw ValidationError("output references an undeclared node");
        outputs_.push_back(id);
    }

    /// Rewires pin `pin` of `gate` to `driver`.
    void set_fanin(NodeId gate, std::size_t pin, NodeId driver) { nodes_.at(gate).fanin.at(pin) = driver; }

    /// Redirects output port `index` to `driver`.
    void set_output(std::size_t index, NodeId driver) { outputs_.at(index) = driver; }

    /// Replaces every fanin and output reference to `from` by `to`, except on the listed gates.
    void replace_uses(NodeId from, NodeId to, std::span<const NodeId> except = {}) {
        for (NodeId id = 0; id < nodes_.size(); ++id) {
            if (std::find(except.begin(), except.end(), id) != except.end()) continue;
            for (NodeId& f : nodes_[id].fanin)
                if (f == from) f = to;
        }
        for (NodeId& o : outputs_)
            if (o == from) o = to;
    }

    /// Checks name uniqueness, fanin resolution, arity and key index contiguity.
    void validate() const {
        for (const Node& n : nodes_) {
            if (n.is_gate() && !arity_ok(n.function, n.fanin.size()))
                throw ValidationError("arity mismatch on '" + n.name + "'");
            for (NodeId f : n.fanin)
                if (f >= nodes_.size()) throw ValidationError("unresolved fanin on '" + n.name + "'");
        }
        for (std::size_t i = 0; i < key_inputs_.size(); ++i)
            if (key_inputs_[i] == kNoNode)
                throw ValidationError("key inputs are not contiguous: missing index " + std::to_string(i));
        for (NodeId o : outputs_)
            if (o >= nodes_.size()) throw ValidationError("unresolved output");
    }

    /// Fanout lists, one per node, in ascending consumer order. Output ports are not included.
    std::vector<std::vector<NodeId>> fanouts() const {
        std::vector<std::vector<NodeId>> out(nodes_.size());
        for (NodeId id = 0; id < nodes_.size(); ++id)
            for (NodeId f : nodes_[id].fanin)
                if (out[f].empty() || out[f].back() != id) out[f].push_back(id);
        return out;
    }

    std::size_t gate_count() const {
        return static_cast<std::size_t>(
            std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.is_gate(); }));
    }

    /// Total number of gate input pins, i.e. directed wire connections.
    std::size_t connection_count() const {
        std::size_t total = 0;
        for (const Node& n : nodes_) total += n.fanin.size();
        return total;
    }

private:
    NodeId add_node(std::string name, NodeKind kind, GateFunction function, std::vector<NodeId> fanin) {
        if (name.empty()) throw ValidationError("empty signal name");
        auto id = static_cast<NodeId>(nodes_.size());
        if (!by_name_.emplace(name, id).second) throw ValidationError("duplicate definition of '" + name + "'");
        nodes_.push_back(Node{std::move(name), kind, function, std::move(fanin)});
        return id;
    }

    std::string name_;
    std::vector<Node> nodes_;
    std::vector<NodeId> inputs_;
    std::vector<NodeId> outputs_;
    std::vector<NodeId> key_inputs_;
    std::unordered_map<std::string, NodeId> by_name_;
};

struct AcyclicResult {
    bool acyclic = true;
    std::vector<NodeId> cycle;  // one cycle, in signal-flow order, when !acyclic
};

/// Structural cycle check over every fanin edge, key inputs included.
inline AcyclicResult check_acyclic(const Netlist& netlist) {
    enum : std::uint8_t { White, Grey, Black };
    const std::size_t n = netlist.size();
    std::vector<std::uint8_t> colour(n, White);
    std::vector<NodeId> parent(n, kNoNode);
    struct Frame {
        NodeId node;
        std::size_t next;
    };
    std::vector<Frame> stack;
    for (NodeId root = 0; root < n; ++root) {
        if (colour[root] != White) continue;
        stack.push_back({root, 0});
        colour[root] = Grey;
        while (!stack.empty()) {
            Frame& top = stack.back();
            const auto& fanin = netlist.node(top.node).fanin;
            if (top.next == fanin.size()) {
                colour[top.node] = Black;
                stack.pop_back();
                continue;
            }
            NodeId f = fanin[top.next++];
            if (colour[f] == White) {
                colour[f] = Grey;
                parent[f] = top.node;
                stack.push_back({f, 0});
            } else if (colour[f] == Grey) {
                // f is on the stack. parent[] points at consumers, so walking it follows signal flow.
                AcyclicResult result{false, {}};
                for (NodeId v = top.node; v != f; v = parent[v]) result.cycle.push_back(v);
                result.cycle.push_back(f);
                return result;
            }
        }
    }
    return {};
}

}  // namespace relink
