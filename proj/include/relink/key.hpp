#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "relink/error.hpp"

namespace relink {

enum class KeyBit : std::uint8_t { Zero, One, Unresolved };

inline KeyBit key_bit(bool value) { return value ? KeyBit::One : KeyBit::Zero; }

inline char key_bit_char(KeyBit b) {
    switch (b) {
        case KeyBit::Zero: return '0';
        case KeyBit::One: return '1';
        default: return 'X';
    }
}

/// Value for each key index 0..K-1; indices are contiguous by construction.
class KeyAssignment {
public:
    KeyAssignment() = default;
    explicit KeyAssignment(std::size_t size, KeyBit fill = KeyBit::Unresolved) : bits_(size, fill) {}

    std::size_t size() const noexcept { return bits_.size(); }
    KeyBit operator[](std::size_t i) const { return bits_.at(i); }
    KeyBit& operator[](std::size_t i) { return bits_.at(i); }

    bool resolved(std::size_t i) const { return bits_.at(i) != KeyBit::Unresolved; }
    std::optional<bool> value(std::size_t i) const {
        if (!resolved(i)) return std::nullopt;
        return bits_[i] == KeyBit::One;
    }

    std::size_t resolved_count() const {
        std::size_t n = 0;
        for (KeyBit b : bits_) n += b != KeyBit::Unresolved;
        return n;
    }

    std::string to_string() const {
        std::string s;
        for (KeyBit b : bits_) s.push_back(key_bit_char(b));
        return s;
    }

    const std::vector<KeyBit>& bits() const noexcept { return bits_; }

    friend bool operator==(const KeyAssignment&, const KeyAssignment&) = default;

private:
    std::vector<KeyBit> bits_;
};

/// Writes one `k<i>=<0|1|X>` line per key bit.
inline void write_key(const KeyAssignment& key, std::ostream& out) {
    for (std::size_t i = 0; i < key.size(); ++i) out << 'k' << i << '=' << key_bit_char(key[i]) << '\n';
}

inline std::string write_key(const KeyAssignment& key) {
    std::ostringstream out;
    write_key(key, out);
    return out.str();
}

inline KeyAssignment parse_key(std::istream& in) {
    std::vector<std::optional<KeyBit>> bits;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (line[0] != 'k' || eq == std::string::npos || eq < 2 || eq + 2 != line.size())
            throw ParseError(line_no, "expected k<i>=<0|1|X>");
        std::size_t index = 0;
        for (std::size_t i = 1; i < eq; ++i) {
            if (line[i] < '0' || line[i] > '9') throw ParseError(line_no, "bad key index");
            index = index * 10 + static_cast<std::size_t>(line[i] - '0');
        }
        KeyBit b;
        switch (line[eq + 1]) {
            case '0': b = KeyBit::Zero; break;
            case '1': b = KeyBit::One; break;
            case 'X':
            case 'x': b = KeyBit::Unresolved; break;
            default: throw ParseError(line_no, "key value must be 0, 1 or X");
        }
        if (bits.size() <= index) bits.resize(index + 1);
        if (bits[index]) throw ParseError(line_no, "duplicate key index " + std::to_string(index));
        bits[index] = b;
    }
    KeyAssignment key(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (!bits[i]) throw ParseError(line_no, "key indices are not contiguous: missing k" + std::to_string(i));
        key[i] = *bits[i];
    }
    return key;
}

inline KeyAssignment parse_key(const std::string& text) {
    std::istringstream in(text);
    return parse_key(in);
}

}  // namespace relink
