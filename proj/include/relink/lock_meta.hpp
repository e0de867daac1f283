#pragma once

// Attacker-visible description of a locked design.
//
// Everything here can be recovered from the locked netlist by tracing key inputs back from the
// key storage: which MUXes exist, which key bits drive them and how switch boxes are grouped.
// The correct key is deliberately absent; it lives in locking.hpp.

#include <algorithm>
#include <array>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "relink/error.hpp"
#include "relink/netlist.hpp"

namespace relink {

enum class LockScheme { RandomMux, InterLock };

inline std::string_view scheme_name(LockScheme s) { return s == LockScheme::RandomMux ? "mux" : "interlock"; }

inline LockScheme scheme_from_name(std::string_view s) {
    if (s == "mux") return LockScheme::RandomMux;
    if (s == "interlock") return LockScheme::InterLock;
    throw ValidationError("unknown locking scheme '" + std::string(s) + "'");
}

/// A 2-input MUX key gate on a single gate pin.
struct MuxSite {
    NodeId mux = kNoNode;
    std::size_t key_index = 0;
    NodeId consumer = kNoNode;  // the gate whose pin the MUX drives
};

/// One switch box. Stage inputs and outputs are signals of the locked netlist.
struct SwitchBoxSite {
    std::size_t keyrb = 0;
    std::size_t stage = 0;
    std::size_t position = 0;
    NodeId f1 = kNoNode, f2 = kNoNode;
    NodeId in_i = kNoNode, in_j = kNoNode;  // previous-stage outputs or external drivers at stage 0
    NodeId ex_i = kNoNode, ex_j = kNoNode;  // side inputs of f1 / f2
    NodeId mux_f1 = kNoNode, mux_f2 = kNoNode;  // input selection
    NodeId out_i = kNoNode, out_j = kNoNode;    // output selection, O_i / O_j
    std::array<std::size_t, 3> key{};           // f1 select, f2 select, shared output select
};

struct KeyRbSite {
    std::size_t size = 0;
    std::size_t stages = 0;
};

struct LockMeta {
    LockScheme scheme = LockScheme::RandomMux;
    std::size_t key_count = 0;
    std::vector<MuxSite> muxes;
    std::vector<KeyRbSite> keyrbs;
    std::vector<SwitchBoxSite> switch_boxes;  // keyrb-major, then stage-major
};

/// What an attacker holds: the locked netlist and its key-gate structure.
struct ObfuscatedDesign {
    Netlist netlist;
    LockMeta meta;
};

namespace detail {

inline void expect_mux(const Netlist& n, NodeId mux, std::size_t key_index, const char* what) {
    const Node& node = n.node(mux);
    if (!node.is_gate() || node.function != GateFunction::Mux2)
        throw ValidationError(std::string(what) + " '" + node.name + "' is not a MUX2");
    if (key_index >= n.key_inputs().size() || node.fanin[0] != n.key_inputs()[key_index])
        throw ValidationError(std::string(what) + " '" + node.name + "' is not selected by key bit " +
                              std::to_string(key_index));
}

inline bool has_fanin(const Netlist& n, NodeId gate, NodeId driver) {
    const auto& f = n.node(gate).fanin;
    return std::find(f.begin(), f.end(), driver) != f.end();
}

}  // namespace detail

/// Checks that the meta description matches the netlist structure.
inline void validate_meta(const Netlist& n, const LockMeta& meta) {
    if (meta.key_count != n.key_inputs().size())
        throw ValidationError("meta key count " + std::to_string(meta.key_count) + " differs from netlist (" +
                              std::to_string(n.key_inputs().size()) + ")");
    for (const MuxSite& m : meta.muxes) {
        detail::expect_mux(n, m.mux, m.key_index, "key gate");
        if (!detail::has_fanin(n, m.consumer, m.mux))
            throw ValidationError("key gate '" + n.node(m.mux).name + "' does not drive '" + n.node(m.consumer).name + "'");
    }
    for (const SwitchBoxSite& s : meta.switch_boxes) {
        detail::expect_mux(n, s.mux_f1, s.key[0], "switch-box input MUX");
        detail::expect_mux(n, s.mux_f2, s.key[1], "switch-box input MUX");
        detail::expect_mux(n, s.out_i, s.key[2], "switch-box output MUX");
        detail::expect_mux(n, s.out_j, s.key[2], "switch-box output MUX");
        for (NodeId m : {s.mux_f1, s.mux_f2}) {
            const auto& f = n.node(m).fanin;
            if (!((f[1] == s.in_i && f[2] == s.in_j) || (f[1] == s.in_j && f[2] == s.in_i)))
                throw ValidationError("switch-box MUX '" + n.node(m).name + "' is not fed by the stage inputs");
        }
        for (auto [gate, mux, ex] : {std::tuple{s.f1, s.mux_f1, s.ex_i}, std::tuple{s.f2, s.mux_f2, s.ex_j}}) {
            const Node& g = n.node(gate);
            if (!is_two_input_logic(g.function, g.fanin.size()) || !detail::has_fanin(n, gate, mux) ||
                !detail::has_fanin(n, gate, ex))
                throw ValidationError("switch-box gate '" + g.name + "' is not wired to its MUX and side input");
        }
        for (auto [out, gate] : {std::pair{s.out_i, s.f1}, std::pair{s.out_j, s.f2}})
            if (!detail::has_fanin(n, out, gate))
                throw ValidationError("switch-box output '" + n.node(out).name + "' does not see its gate");
    }
}

inline void validate_meta(const ObfuscatedDesign& d) { validate_meta(d.netlist, d.meta); }

/// Line-oriented meta file, all nodes referenced by signal name.
inline void write_meta(const ObfuscatedDesign& d, std::ostream& out) {
    const Netlist& n = d.netlist;
    auto name = [&](NodeId id) -> const std::string& { return n.node(id).name; };
    out << "# relink lock meta v1\n";
    out << "scheme " << scheme_name(d.meta.scheme) << "\n";
    out << "keys " << d.meta.key_count << "\n";
    for (std::size_t r = 0; r < d.meta.keyrbs.size(); ++r)
        out << "keyrb " << r << " size=" << d.meta.keyrbs[r].size << " stages=" << d.meta.keyrbs[r].stages << "\n";
    for (const SwitchBoxSite& s : d.meta.switch_boxes) {
        out << "swb keyrb=" << s.keyrb << " stage=" << s.stage << " pos=" << s.position << " f1=" << name(s.f1)
            << " f2=" << name(s.f2) << " in_i=" << name(s.in_i) << " in_j=" << name(s.in_j) << " ex_i=" << name(s.ex_i)
            << " ex_j=" << name(s.ex_j) << " mux_f1=" << name(s.mux_f1) << " mux_f2=" << name(s.mux_f2)
            << " out_i=" << name(s.out_i) << " out_j=" << name(s.out_j) << " keys=" << s.key[0] << ',' << s.key[1]
            << ',' << s.key[2] << "\n";
    }
    for (const MuxSite& m : d.meta.muxes)
        out << "mux node=" << name(m.mux) << " key=" << m.key_index << " consumer=" << name(m.consumer) << "\n";
}

inline std::string write_meta(const ObfuscatedDesign& d) {
    std::ostringstream out;
    write_meta(d, out);
    return out.str();
}

/// Reads a meta file against the netlist it describes and validates the pairing.
inline LockMeta parse_meta(std::istream& in, const Netlist& netlist) {
    LockMeta meta;
    bool have_scheme = false, have_keys = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream words(line);
        std::string kind;
        words >> kind;
        std::map<std::string, std::string> fields;
        std::vector<std::string> positional;
        for (std::string w; words >> w;) {
            auto eq = w.find('=');
            if (eq == std::string::npos)
                positional.push_back(w);
            else
                fields[w.substr(0, eq)] = w.substr(eq + 1);
        }
        auto field = [&](const std::string& key) -> const std::string& {
            auto it = fields.find(key);
            if (it == fields.end()) throw ParseError(line_no, "missing field '" + key + "'");
            return it->second;
        };
        auto number = [&](const std::string& text) -> std::size_t {
            try {
                std::size_t pos = 0;
                auto v = std::stoull(text, &pos);
                if (pos != text.size()) throw std::invalid_argument(text);
                return static_cast<std::size_t>(v);
            } catch (const std::exception&) {
                throw ParseError(line_no, "expected a number, got '" + text + "'");
            }
        };
        auto signal = [&](const std::string& key) -> NodeId {
            auto id = netlist.find(field(key));
            if (!id) throw ParseError(line_no, "meta refers to unknown signal '" + field(key) + "'");
            return *id;
        };
        if (kind == "scheme") {
            if (positional.size() != 1) throw ParseError(line_no, "expected 'scheme <name>'");
            try {
                meta.scheme = scheme_from_name(positional[0]);
            } catch (const ValidationError& e) {
                throw ParseError(line_no, e.what());
            }
            have_scheme = true;
        } else if (kind == "keys") {
            if (positional.size() != 1) throw ParseError(line_no, "expected 'keys <count>'");
            meta.key_count = number(positional[0]);
            have_keys = true;
        } else if (kind == "keyrb") {
            meta.keyrbs.push_back({number(field("size")), number(field("stages"))});
        } else if (kind == "swb") {
            SwitchBoxSite s;
            s.keyrb = number(field("keyrb"));
            s.stage = number(field("stage"));
            s.position = number(field("pos"));
            s.f1 = signal("f1");
            s.f2 = signal("f2");
            s.in_i = signal("in_i");
            s.in_j = signal("in_j");
            s.ex_i = signal("ex_i");
            s.ex_j = signal("ex_j");
            s.mux_f1 = signal("mux_f1");
            s.mux_f2 = signal("mux_f2");
            s.out_i = signal("out_i");
            s.out_j = signal("out_j");
            std::istringstream keys(field("keys"));
            std::string k;
            for (std::size_t i = 0; i < 3; ++i) {
                if (!std::getline(keys, k, ',')) throw ParseError(line_no, "switch box needs three key indices");
                s.key[i] = number(k);
            }
            meta.switch_boxes.push_back(s);
        } else if (kind == "mux") {
            meta.muxes.push_back({signal("node"), number(field("key")), signal("consumer")});
        } else {
            throw ParseError(line_no, "unknown meta record '" + kind + "'");
        }
    }
    if (!have_scheme || !have_keys) throw ParseError(line_no, "meta file lacks 'scheme' or 'keys'");
    try {
        validate_meta(netlist, meta);
    } catch (const ValidationError& e) {
        throw ParseError(line_no, std::string("meta/netlist mismatch: ") + e.what());
    }
    return meta;
}

inline LockMeta parse_meta(const std::string& text, const Netlist& netlist) {
    std::istringstream in(text);
    return parse_meta(in, netlist);
}

}  // namespace relink
