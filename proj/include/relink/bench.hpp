#pragma once

// BENCH reader and writer.
//
// Dialect: `INPUT(x)`, `OUTPUT(y)`, `y = GATE(a, b, ...)`, `#` comments. Gate keywords are
// case-insensitive on input and upper-case on output. MUX2 is the 3-ary extension
// `y = MUX(sel, in0, in1)`. Inputs named `keyinput<i>` are key inputs.

#include <cctype>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "relink/netlist.hpp"

namespace relink {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline bool valid_signal(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')' || c == ',' || c == '=' || c == '#')
            return false;
    return true;
}

// Parses "KEYWORD(arg, arg, ...)" and returns false when the shape does not match.
inline bool split_call(std::string_view text, std::string_view& keyword, std::vector<std::string_view>& args) {
    auto open = text.find('(');
    if (open == std::string_view::npos || text.back() != ')') return false;
    keyword = trim(text.substr(0, open));
    args.clear();
    std::string_view inner = text.substr(open + 1, text.size() - open - 2);
    if (trim(inner).empty()) return true;
    while (true) {
        auto comma = inner.find(',');
        args.push_back(trim(inner.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        inner.remove_prefix(comma + 1);
    }
    return true;
}

}  // namespace detail

/// Parses a BENCH netlist. Signals may be used before their definition.
inline Netlist parse_bench(std::istream& in, std::string name = {}) {
    struct PendingGate {
        std::string out;
        GateFunction function;
        std::vector<std::string> args;
        std::size_t line;
    };
    std::vector<std::pair<std::string, std::size_t>> inputs, outputs;
    std::vector<PendingGate> gates;

    std::string raw;
    std::size_t line_no = 0;
    std::string_view keyword;
    std::vector<std::string_view> args;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            if (!detail::split_call(line, keyword, args) || args.size() != 1 || !detail::valid_signal(args[0]))
                throw ParseError(line_no, "expected INPUT(x), OUTPUT(y) or an assignment");
            std::string kw(keyword);
            for (char& c : kw) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            if (kw == "INPUT")
                inputs.emplace_back(std::string(args[0]), line_no);
            else if (kw == "OUTPUT")
                outputs.emplace_back(std::string(args[0]), line_no);
            else
                throw ParseError(line_no, "unknown declaration '" + std::string(keyword) + "'");
            continue;
        }
        std::string_view lhs = detail::trim(line.substr(0, eq));
        std::string_view rhs = detail::trim(line.substr(eq + 1));
        if (!detail::valid_signal(lhs)) throw ParseError(line_no, "invalid signal name '" + std::string(lhs) + "'");
        if (!detail::split_call(rhs, keyword, args)) throw ParseError(line_no, "expected GATE(a, ...)");
        auto function = gate_from_name(keyword);
        if (!function) throw ParseError(line_no, "unknown gate type '" + std::string(keyword) + "'");
        if (!arity_ok(*function, args.size()))
            throw ParseError(line_no, "arity mismatch: " + std::string(gate_name(*function)) + " with " +
                                          std::to_string(args.size()) + " inputs");
        PendingGate g{std::string(lhs), *function, {}, line_no};
        for (auto a : args) {
            if (!detail::valid_signal(a)) throw ParseError(line_no, "invalid signal name '" + std::string(a) + "'");
            g.args.emplace_back(a);
        }
        gates.push_back(std::move(g));
    }

    Netlist netlist(std::move(name));
    auto declare = [&](auto&& fn, std::size_t line) {
        try {
            fn();
        } catch (const ValidationError& e) {
            throw ParseError(line, e.what());
        }
    };
    for (auto& [sig, line] : inputs) {
        declare(
            [&] {
                if (auto k = key_index_from_name(sig))
                    netlist.add_key_input(*k, sig);
                else
                    netlist.add_input(sig);
            },
            line);
    }
    // Gates are added in declaration order; forward references are patched afterwards.
    std::vector<NodeId> gate_ids;
    gate_ids.reserve(gates.size());
    for (auto& g : gates)
        declare([&] { gate_ids.push_back(netlist.add_gate(g.out, g.function, std::vector<NodeId>(g.args.size(), kNoNode))); },
                g.line);
    for (std::size_t i = 0; i < gates.size(); ++i) {
        for (std::size_t pin = 0; pin < gates[i].args.size(); ++pin) {
            auto driver = netlist.find(gates[i].args[pin]);
            if (!driver) throw ParseError(gates[i].line, "undeclared signal '" + gates[i].args[pin] + "'");
            netlist.set_fanin(gate_ids[i], pin, *driver);
        }
    }
    for (auto& [sig, line] : outputs) {
        auto id = netlist.find(sig);
        if (!id) throw ParseError(line, "undeclared output '" + sig + "'");
        netlist.add_output(*id);
    }
    try {
        netlist.validate();
    } catch (const ValidationError& e) {
        throw ParseError(line_no, e.what());
    }
    return netlist;
}

inline Netlist parse_bench(std::string_view text, std::string name = {}) {
    std::istringstream in{std::string(text)};
    return parse_bench(in, std::move(name));
}

/// Writes a netlist in BENCH form: one comment line, inputs, key inputs, outputs, gates.
inline void write_bench(const Netlist& netlist, std::ostream& out) {
    out << "# " << (netlist.name().empty() ? "netlist" : netlist.name()) << "\n";
    for (NodeId id : netlist.inputs()) out << "INPUT(" << netlist.node(id).name << ")\n";
    for (NodeId id : netlist.key_inputs()) out << "INPUT(" << netlist.node(id).name << ")\n";
    for (NodeId id : netlist.outputs()) out << "OUTPUT(" << netlist.node(id).name << ")\n";
    for (const Node& n : netlist.nodes()) {
        if (!n.is_gate()) continue;
        out << n.name << " = " << gate_name(n.function) << "(";
        for (std::size_t i = 0; i < n.fanin.size(); ++i) out << (i ? ", " : "") << netlist.node(n.fanin[i]).name;
        out << ")\n";
    }
}

inline std::string write_bench(const Netlist& netlist) {
    std::ostringstream out;
    write_bench(netlist, out);
    return out.str();
}

}  // namespace relink
