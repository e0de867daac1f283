#pragma once

// Locking transformations and their ground truth.
//
// `LockedDesign` pairs the attacker-visible `ObfuscatedDesign` with the correct key and the
// true wiring. Only locking, evaluation and tests should see this header; the attack works on
// `ObfuscatedDesign` and the graph built from it.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "relink/error.hpp"
#include "relink/key.hpp"
#include "relink/lock_meta.hpp"
#include "relink/netlist.hpp"
#include "relink/random.hpp"

namespace relink {

/// Ground truth of one random MUX key gate.
struct MuxKeyGate {
    NodeId mux_node = kNoNode;
    std::size_t key_input = 0;
    NodeId true_wire = kNoNode;
    NodeId false_wire = kNoNode;
    NodeId consumer = kNoNode;
    bool correct_bit = false;  // the select value that passes true_wire
};

/// A directed chain of 2-input gates; gates[t] feeds gates[t + 1] through pin routed_pin[t + 1].
struct TimingPath {
    std::vector<NodeId> gates;
    std::vector<std::uint8_t> routed_pin;  // pin of gates[t] driven by the previous hop
    NodeId source = kNoNode;               // driver of gates[0] on routed_pin[0]
};

/// Ground truth of one key-controlled routing block.
struct KeyRB {
    std::size_t size = 0;
    std::size_t stages = 0;
    std::vector<SwitchBoxSite> boxes;  // stage-major, size/2 per stage
    std::vector<TimingPath> embedded_paths;
};

struct LockedDesign {
    ObfuscatedDesign design;
    std::vector<MuxKeyGate> mux_gates;
    std::vector<KeyRB> keyrbs;
    KeyAssignment correct_key;  // evaluation only

    const Netlist& netlist() const noexcept { return design.netlist; }
    const LockMeta& meta() const noexcept { return design.meta; }
    LockScheme scheme() const noexcept { return design.meta.scheme; }
};

inline std::size_t keyrb_stage_count(std::size_t size) {
    return 2 * static_cast<std::size_t>(std::countr_zero(size)) - 2;
}

/// Key bits of `n_keyrbs` routing blocks of the given size: three per switch box.
inline std::size_t interlock_key_count(std::size_t n_keyrbs, std::size_t size) {
    return 3 * keyrb_stage_count(size) * (size / 2) * n_keyrbs;
}

namespace detail {

inline std::string fresh_name(const Netlist& n, std::string base) {
    if (!n.find(base)) return base;
    for (std::size_t i = 1;; ++i) {
        std::string candidate = base + "_" + std::to_string(i);
        if (!n.find(candidate)) return candidate;
    }
}

inline bool adjacent(const Netlist& n, NodeId a, NodeId b) {
    return has_fanin(n, a, b) || has_fanin(n, b, a);
}

inline void require_unlocked(const Netlist& n) {
    if (!n.key_inputs().empty()) throw LockingError("netlist already has key inputs");
}

}  // namespace detail

/// Inserts `key_size` MUX key gates on randomly chosen gate-to-gate connections.
///
/// The true wire is the original driver of the cut pin; the false wire is a random other gate
/// that is not already adjacent to the consumer. The correct select value is a fair coin per
/// gate. False wires from the consumer's transitive fanout are allowed, so the locked design
/// may contain combinational cycles.
inline LockedDesign lock_random_mux(const Netlist& original, std::size_t key_size, std::uint64_t seed) {
    detail::require_unlocked(original);
    Rng rng(seed);
    LockedDesign locked;
    locked.design.netlist = original;
    locked.design.meta.scheme = LockScheme::RandomMux;
    Netlist& net = locked.design.netlist;

    struct Connection {
        NodeId gate;
        std::size_t pin;
        NodeId driver;
    };
    std::vector<Connection> connections;
    std::vector<NodeId> gates;
    for (NodeId id = 0; id < original.size(); ++id) {
        const Node& node = original.node(id);
        if (!node.is_gate()) continue;
        gates.push_back(id);
        for (std::size_t pin = 0; pin < node.fanin.size(); ++pin) {
            NodeId d = node.fanin[pin];
            if (original.node(d).is_gate() && std::count(node.fanin.begin(), node.fanin.end(), d) == 1)
                connections.push_back({id, pin, d});
        }
    }
    if (key_size > connections.size())
        throw LockingError("key size " + std::to_string(key_size) + " exceeds the " +
                           std::to_string(connections.size()) + " internal wires");
    shuffle(std::span(connections), rng);

    std::vector<std::pair<NodeId, NodeId>> used;  // (driver, consumer) candidate pairs
    auto is_used = [&](NodeId d, NodeId c) { return std::find(used.begin(), used.end(), std::pair{d, c}) != used.end(); };
    constexpr int kFalseWireTries = 64;
    for (std::size_t ci = 0; ci < connections.size() && locked.mux_gates.size() < key_size; ++ci) {
        const Connection c = connections[ci];
        NodeId false_wire = kNoNode;
        for (int attempt = 0; attempt < kFalseWireTries; ++attempt) {
            NodeId cand = gates[uniform_index(rng, gates.size())];
            if (cand == c.driver || cand == c.gate || detail::adjacent(original, cand, c.gate) || is_used(cand, c.gate))
                continue;
            false_wire = cand;
            break;
        }
        if (false_wire == kNoNode) continue;

        const std::size_t k = locked.mux_gates.size();
        const bool bit = coin(rng);
        NodeId key = net.add_key_input(k);
        NodeId in0 = bit ? false_wire : c.driver;
        NodeId in1 = bit ? c.driver : false_wire;
        NodeId mux = net.add_gate(detail::fresh_name(net, "keymux" + std::to_string(k)), GateFunction::Mux2,
                                  {key, in0, in1});
        net.set_fanin(c.gate, c.pin, mux);
        used.emplace_back(c.driver, c.gate);
        used.emplace_back(false_wire, c.gate);
        locked.mux_gates.push_back({mux, k, c.driver, false_wire, c.gate, bit});
        locked.design.meta.muxes.push_back({mux, k, c.gate});
    }
    if (locked.mux_gates.size() < key_size)
        throw LockingError("ran out of distinct false wires after placing " + std::to_string(locked.mux_gates.size()) +
                           " of " + std::to_string(key_size) + " key gates");

    locked.design.meta.key_count = key_size;
    locked.correct_key = KeyAssignment(key_size);
    for (const MuxKeyGate& g : locked.mux_gates) locked.correct_key[g.key_input] = key_bit(g.correct_bit);
    return locked;
}

namespace detail {

/// Randomised DFS for vertex-disjoint chains of 2-input gates.
///
/// Every node takes at most one role: path gate, path source, or side input (side inputs may be
/// shared). Sources must be gates and may not be driven by a path gate. Together these rules
/// make sure no false candidate link of a switch box coincides with an existing wire.
class PathSearch {
public:
    enum class Role : std::uint8_t { None, Gate, Source, Side };

    PathSearch(const Netlist& n, std::uint64_t seed)
        : net_(n), fanouts_(n.fanouts()), role_(n.size(), Role::None), rng_(seed) {
        for (NodeId id = 0; id < n.size(); ++id)
            if (eligible_shape(id)) roots_.push_back(id);
    }

    /// Roles persist across calls, so repeated calls return paths disjoint from earlier ones.
    std::vector<TimingPath> select(std::size_t n_paths, std::size_t length, std::size_t budget) {
        std::vector<TimingPath> paths;
        std::size_t attempts = 0;
        while (paths.size() < n_paths) {
            if (roots_.empty() || attempts >= budget) throw InfeasiblePathsError(paths.size(), n_paths);
            ++attempts;
            TimingPath p;
            if (try_root(roots_[uniform_index(rng_, roots_.size())], length, p)) paths.push_back(std::move(p));
        }
        return paths;
    }

private:
    bool eligible_shape(NodeId id) const {
        const Node& node = net_.node(id);
        return node.is_gate() && is_two_input_logic(node.function, node.fanin.size()) && node.fanin[0] != node.fanin[1];
    }

    bool can_be_gate(NodeId id) const {
        if (role_[id] != Role::None || !eligible_shape(id)) return false;
        for (NodeId c : fanouts_[id])
            if (role_[c] == Role::Source) return false;
        return true;
    }

    bool can_be_side(NodeId id) const { return role_[id] == Role::None || role_[id] == Role::Side; }

    bool try_root(NodeId root, std::size_t length, TimingPath& path) {
        if (!can_be_gate(root)) return false;
        const auto& fanin = net_.node(root).fanin;
        const std::uint8_t pin = coin(rng_) ? 1 : 0;
        const NodeId source = fanin[pin], side = fanin[1 - pin];
        if (!net_.node(source).is_gate() || role_[source] != Role::None || !can_be_side(side)) return false;
        for (NodeId f : net_.node(source).fanin)
            if (role_[f] == Role::Gate || f == root) return false;

        Undo undo;
        assign(source, Role::Source, undo);
        assign(root, Role::Gate, undo);
        assign(side, Role::Side, undo);
        path = TimingPath{{root}, {pin}, source};
        expansions_ = 0;
        if (extend(path, length, undo)) return true;
        rollback(undo);
        return false;
    }

    using Undo = std::vector<std::pair<NodeId, Role>>;

    bool extend(TimingPath& path, std::size_t length, Undo& undo) {
        if (path.gates.size() == length) return true;
        if (++expansions_ > kMaxExpansions) return false;
        const NodeId tail = path.gates.back();
        std::vector<NodeId> next = fanouts_[tail];
        shuffle(std::span(next), rng_);
        for (NodeId u : next) {
            if (!can_be_gate(u)) continue;
            const auto& fanin = net_.node(u).fanin;
            const std::uint8_t pin = fanin[0] == tail ? 0 : 1;
            const NodeId side = fanin[1 - pin];
            if (!can_be_side(side)) continue;
            const std::size_t mark = undo.size();
            assign(u, Role::Gate, undo);
            assign(side, Role::Side, undo);
            path.gates.push_back(u);
            path.routed_pin.push_back(pin);
            if (extend(path, length, undo)) return true;
            path.gates.pop_back();
            path.routed_pin.pop_back();
            rollback(undo, mark);
        }
        return false;
    }

    void assign(NodeId id, Role role, Undo& undo) {
        undo.emplace_back(id, role_[id]);
        role_[id] = role;
    }

    void rollback(Undo& undo, std::size_t mark = 0) {
        while (undo.size() > mark) {
            role_[undo.back().first] = undo.back().second;
            undo.pop_back();
        }
    }

    static constexpr std::size_t kMaxExpansions = 256;

    const Netlist& net_;
    std::vector<std::vector<NodeId>> fanouts_;
    std::vector<Role> role_;
    std::vector<NodeId> roots_;
    Rng rng_;
    std::size_t expansions_ = 0;
};

}  // namespace detail

inline constexpr std::size_t kPathSearchBudget = 10000;

/// Picks `n_paths` vertex-disjoint chains of exactly `length` 2-input gates.
inline std::vector<TimingPath> select_timing_paths(const Netlist& netlist, std::size_t n_paths, std::size_t length,
                                                   std::uint64_t seed, std::size_t budget = kPathSearchBudget) {
    if (length == 0) throw LockingError("path length must be positive");
    auto cycle = check_acyclic(netlist);
    if (!cycle.acyclic) throw LockingError("timing path selection needs an acyclic netlist");
    detail::PathSearch search(netlist, seed);
    return search.select(n_paths, length, budget);
}

/// Embeds `n_keyrbs` routing blocks of `size` inputs at full utilisation.
///
/// Each block carries `size` timing paths, one gate per stage. Lines are paired per stage along
/// bit positions n-1, ..., 1, 0, 1, ..., n-2 (n = log2 size) and every switch box keeps or swaps
/// its two lines, so f1 and f2 always take distinct stage inputs under the correct key. Each
/// switch box has two input-selection MUXes with their own key bits and two output MUXes sharing
/// the third; the output MUXes pick the gate over the pass-through line.
inline LockedDesign lock_interlock(const Netlist& original, std::size_t n_keyrbs, std::size_t size,
                                   std::uint64_t seed) {
    detail::require_unlocked(original);
    if (size < 4) throw LockingError("KeyRB size must be at least 4");
    if (!std::has_single_bit(size)) throw LockingError("KeyRB size must be a power of two");
    if (n_keyrbs == 0) throw LockingError("at least one KeyRB is required");
    if (!check_acyclic(original).acyclic) throw LockingError("InterLock needs an acyclic netlist");

    const std::size_t log_n = static_cast<std::size_t>(std::countr_zero(size));
    const std::size_t stages = keyrb_stage_count(size);
    Rng rng(seed);
    detail::PathSearch search(original, derive_seed(seed, 1));

    LockedDesign locked;
    locked.design.netlist = original;
    locked.design.meta.scheme = LockScheme::InterLock;
    Netlist& net = locked.design.netlist;
    const std::size_t key_count = interlock_key_count(n_keyrbs, size);
    for (std::size_t k = 0; k < key_count; ++k) net.add_key_input(k);
    locked.correct_key = KeyAssignment(key_count);
    locked.design.meta.key_count = key_count;

    for (std::size_t r = 0; r < n_keyrbs; ++r) {
        KeyRB rb{size, stages, {}, search.select(size, stages, kPathSearchBudget)};
        locked.keyrbs.push_back(std::move(rb));
        locked.design.meta.keyrbs.push_back({size, stages});
    }

    // Output MUX per embedded gate; every original use of the gate now goes through it.
    const auto fanouts = original.fanouts();
    std::vector<NodeId> out_mux(original.size(), kNoNode);
    for (const KeyRB& rb : locked.keyrbs)
        for (const TimingPath& p : rb.embedded_paths)
            for (NodeId g : p.gates)
                out_mux[g] = net.add_gate(detail::fresh_name(net, original.node(g).name + "_rbo"), GateFunction::Mux2,
                                          {kNoNode, kNoNode, kNoNode});
    for (NodeId g = 0; g < original.size(); ++g) {
        if (out_mux[g] == kNoNode) continue;
        for (NodeId c : fanouts[g])
            for (std::size_t pin = 0; pin < net.node(c).fanin.size(); ++pin)
                if (net.node(c).fanin[pin] == g) net.set_fanin(c, pin, out_mux[g]);
        for (std::size_t o = 0; o < net.outputs().size(); ++o)
            if (net.outputs()[o] == g) net.set_output(o, out_mux[g]);
    }

    std::size_t next_key = 0;
    for (std::size_t r = 0; r < locked.keyrbs.size(); ++r) {
        KeyRB& rb = locked.keyrbs[r];
        std::vector<std::size_t> line_path(size);
        for (std::size_t i = 0; i < size; ++i) line_path[i] = i;
        shuffle(std::span(line_path), rng);
        std::vector<NodeId> line_signal(size);
        for (std::size_t x = 0; x < size; ++x) line_signal[x] = rb.embedded_paths[line_path[x]].source;

        for (std::size_t t = 0; t < stages; ++t) {
            const std::size_t bit = t < log_n ? log_n - 1 - t : t - log_n + 1;
            const std::size_t mask = std::size_t{1} << bit;
            std::vector<std::size_t> next_path = line_path;
            std::vector<NodeId> next_signal(size);
            std::size_t position = 0;
            for (std::size_t x = 0; x < size; ++x) {
                if (x & mask) continue;
                const std::size_t y = x | mask;
                const bool swap = coin(rng);
                if (swap) std::swap(next_path[x], next_path[y]);
                const TimingPath& p1 = rb.embedded_paths[next_path[x]];
                const TimingPath& p2 = rb.embedded_paths[next_path[y]];

                SwitchBoxSite s;
                s.keyrb = r;
                s.stage = t;
                s.position = position++;
                s.f1 = p1.gates[t];
                s.f2 = p2.gates[t];
                s.in_i = line_signal[x];
                s.in_j = line_signal[y];
                const std::uint8_t pin1 = p1.routed_pin[t], pin2 = p2.routed_pin[t];
                s.ex_i = original.node(s.f1).fanin[1 - pin1];
                s.ex_j = original.node(s.f2).fanin[1 - pin2];
                s.key = {next_key, next_key + 1, next_key + 2};
                next_key += 3;

                const std::string base = "rb" + std::to_string(r) + "_s" + std::to_string(t) + "_b" + std::to_string(s.position);
                // f1 takes in_i unless the box swaps; f2 takes the other line.
                const NodeId want1 = swap ? s.in_j : s.in_i;
                const NodeId want2 = swap ? s.in_i : s.in_j;
                auto input_mux = [&](NodeId want, std::size_t key, const std::string& name) {
                    const bool bit_value = coin(rng);
                    const NodeId other = want == s.in_i ? s.in_j : s.in_i;
                    locked.correct_key[key] = key_bit(bit_value);
                    return net.add_gate(detail::fresh_name(net, name), GateFunction::Mux2,
                                        {net.key_inputs()[key], bit_value ? other : want, bit_value ? want : other});
                };
                s.mux_f1 = input_mux(want1, s.key[0], base + "_m1");
                s.mux_f2 = input_mux(want2, s.key[1], base + "_m2");
                net.set_fanin(s.f1, pin1, s.mux_f1);
                net.set_fanin(s.f2, pin2, s.mux_f2);

                const bool out_bit = coin(rng);
                locked.correct_key[s.key[2]] = key_bit(out_bit);
                const NodeId out_key = net.key_inputs()[s.key[2]];
                s.out_i = out_mux[s.f1];
                s.out_j = out_mux[s.f2];
                for (auto [o, gate, pass] : {std::tuple{s.out_i, s.f1, s.in_i}, std::tuple{s.out_j, s.f2, s.in_j}}) {
                    net.set_fanin(o, 0, out_key);
                    net.set_fanin(o, 1, out_bit ? pass : gate);
                    net.set_fanin(o, 2, out_bit ? gate : pass);
                }
                next_signal[x] = s.out_i;
                next_signal[y] = s.out_j;
                rb.boxes.push_back(s);
                locked.design.meta.switch_boxes.push_back(s);
            }
            line_path = std::move(next_path);
            line_signal = std::move(next_signal);
        }
    }
    validate_meta(locked.design);
    return locked;
}

}  // namespace relink
