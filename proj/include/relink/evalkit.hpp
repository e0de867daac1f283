#pragma once

// Scoring recovered keys and designs against the reference. Evaluation only.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relink/attack.hpp"
#include "relink/error.hpp"
#include "relink/key.hpp"
#include "relink/netlist.hpp"
#include "relink/random.hpp"
#include "relink/simulate.hpp"

namespace relink {

struct KeyMetrics {
    std::size_t key_count = 0;
    std::size_t correct = 0, wrong = 0, undeciphered = 0;
    double precision = 100;           // percent, (K - wrong) / K as in the published tables
    double accuracy = 0;              // percent, correct / K
    double decision_precision = 100;  // percent, correct / (correct + wrong); 100 and flagged when nothing was decided
    bool precision_defined = false;   // whether any bit was decided
};

inline KeyMetrics score_key(const KeyAssignment& recovered, const KeyAssignment& truth) {
    if (recovered.size() != truth.size())
        throw ValidationError("key sizes differ: " + std::to_string(recovered.size()) + " vs " +
                              std::to_string(truth.size()));
    KeyMetrics m;
    m.key_count = truth.size();
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!truth.resolved(i)) throw ValidationError("reference key bit " + std::to_string(i) + " is unresolved");
        if (!recovered.resolved(i))
            ++m.undeciphered;
        else if (recovered[i] == truth[i])
            ++m.correct;
        else
            ++m.wrong;
    }
    m.precision_defined = m.correct + m.wrong > 0;
    if (m.precision_defined)
        m.decision_precision = 100.0 * static_cast<double>(m.correct) / static_cast<double>(m.correct + m.wrong);
    if (m.key_count) {
        const auto k = static_cast<double>(m.key_count);
        m.precision = 100.0 * (k - static_cast<double>(m.wrong)) / k;
        m.accuracy = 100.0 * static_cast<double>(m.correct) / k;
    }
    return m;
}

/// One row per attack iteration, with link decisions judged against the reference.
struct IterationRow {
    std::size_t iteration = 0;
    double th = 0, up = 0;
    std::size_t h = 2;
    bool ensemble = false;
    std::string event;
    std::size_t correct = 0, wrong = 0;
    std::size_t links_recovered = 0;  // cumulative true links accepted
    std::size_t links_left = 0;

    friend bool operator==(const IterationRow&, const IterationRow&) = default;
};

/// Joins the attack's iteration log with per-link truth.
inline std::vector<IterationRow> judge_iterations(const AttackReport& report, const std::vector<bool>& link_truth) {
    std::vector<IterationRow> rows;
    std::size_t recovered = 0;
    for (const IterationRecord& it : report.iterations) {
        IterationRow r{it.iteration, it.th, it.up, it.h, it.ensemble, it.event};
        for (std::size_t l : it.accepted) {
            if (l >= link_truth.size()) throw ValidationError("accepted link outside the candidate set");
            (link_truth[l] ? r.correct : r.wrong)++;
        }
        recovered += r.correct;
        r.links_recovered = recovered;
        r.links_left = it.links_left;
        rows.push_back(std::move(r));
    }
    return rows;
}

enum class UnresolvedPolicy : std::uint8_t { RandomCompletion, AllWrong };

struct HdOptions {
    std::size_t num_keys = 20;
    std::size_t num_patterns = 2000;
    std::size_t exhaustive_limit = 16;  // |PI| at or below this is swept exhaustively
    UnresolvedPolicy policy = UnresolvedPolicy::RandomCompletion;
    std::uint64_t seed = 1;

    static HdOptions paper_scale() {
        HdOptions o;
        o.num_keys = 100;
        o.num_patterns = 10000;
        return o;
    }
};

struct HdResult {
    double hd_percent = 0;
    std::size_t num_keys_sampled = 0;  // completions that could be simulated
    std::size_t num_patterns = 0;      // per completion
    std::size_t incomparable = 0;      // completions that close a combinational cycle
    bool exhaustive_inputs = false;
    bool exhaustive_keys = false;
};

/// Mean percentage of differing output bits between `original` and `recovered`.
///
/// Unresolved bits of `recovered_key` are completed per sampled key; all completions are
/// enumerated when there are no more of them than `num_keys`. AllWrong needs `truth` and sets
/// every unresolved bit to the opposite of the reference.
inline HdResult hamming_distance(const Netlist& original, const Netlist& recovered, const KeyAssignment& recovered_key,
                                 const HdOptions& opt = {}, const KeyAssignment* truth = nullptr) {
    if (original.inputs().size() != recovered.inputs().size() ||
        original.outputs().size() != recovered.outputs().size())
        throw ValidationError("designs do not share their input/output interface");
    if (recovered_key.size() != recovered.key_inputs().size())
        throw ValidationError("key size does not match the recovered design");
    if (!original.key_inputs().empty()) throw ValidationError("original design must be unlocked");
    if (opt.policy == UnresolvedPolicy::AllWrong && (!truth || truth->size() != recovered_key.size()))
        throw ValidationError("all-wrong completion needs the reference key");
    if (opt.num_keys == 0 || opt.num_patterns == 0) throw ValidationError("need at least one key and one pattern");

    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < recovered_key.size(); ++i)
        if (!recovered_key.resolved(i)) open.push_back(i);

    Rng rng(opt.seed);
    std::vector<KeyAssignment> keys;
    HdResult res;
    if (open.empty() || opt.policy == UnresolvedPolicy::AllWrong) {
        KeyAssignment k = recovered_key;
        for (std::size_t i : open) k[i] = (*truth)[i] == KeyBit::One ? KeyBit::Zero : KeyBit::One;
        keys.push_back(std::move(k));
        res.exhaustive_keys = true;
    } else if (open.size() < 63 && (std::uint64_t{1} << open.size()) <= opt.num_keys) {
        for (std::uint64_t c = 0; c < (std::uint64_t{1} << open.size()); ++c) {
            KeyAssignment k = recovered_key;
            for (std::size_t b = 0; b < open.size(); ++b) k[open[b]] = key_bit((c >> b) & 1U);
            keys.push_back(std::move(k));
        }
        res.exhaustive_keys = true;
    } else {
        for (std::size_t s = 0; s < opt.num_keys; ++s) {
            KeyAssignment k = recovered_key;
            for (std::size_t i : open) k[i] = key_bit(coin(rng));
            keys.push_back(std::move(k));
        }
    }

    const std::size_t n_in = original.inputs().size();
    const std::size_t n_out = original.outputs().size();
    res.exhaustive_inputs = n_in <= opt.exhaustive_limit;
    // Input blocks shared by every completion, so completions are compared on the same patterns.
    std::vector<std::vector<std::uint64_t>> blocks;
    std::vector<std::uint64_t> masks;
    if (res.exhaustive_inputs) {
        res.num_patterns = std::size_t{1} << n_in;
        for (std::uint64_t b = 0; b < exhaustive_block_count(n_in); ++b) {
            blocks.push_back(exhaustive_input_words(n_in, b));
            masks.push_back(exhaustive_lane_mask(n_in, b));
        }
    } else {
        res.num_patterns = opt.num_patterns;
        for (std::size_t done = 0; done < opt.num_patterns; done += 64) {
            std::vector<std::uint64_t> w(n_in);
            for (auto& x : w) x = rng();
            blocks.push_back(std::move(w));
            const std::size_t lanes = std::min<std::size_t>(64, opt.num_patterns - done);
            masks.push_back(lanes == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << lanes) - 1);
        }
    }

    Simulator reference(original);
    std::vector<std::vector<std::uint64_t>> ref_out;
    for (const auto& w : blocks) ref_out.push_back(reference.run(w));

    std::uint64_t diff_bits = 0;
    for (const KeyAssignment& k : keys) {
        std::optional<Simulator> sim;
        try {
            sim.emplace(recovered, &k);
        } catch (const CycleError&) {
            ++res.incomparable;
            continue;
        }
        ++res.num_keys_sampled;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            auto out = sim->run(blocks[b]);
            for (std::size_t o = 0; o < n_out; ++o)
                diff_bits += static_cast<std::uint64_t>(std::popcount((out[o] ^ ref_out[b][o]) & masks[b]));
        }
    }
    if (res.num_keys_sampled && n_out) {
        const double total = static_cast<double>(res.num_keys_sampled) * static_cast<double>(res.num_patterns) *
                             static_cast<double>(n_out);
        res.hd_percent = 100.0 * static_cast<double>(diff_bits) / total;
    }
    return res;
}

/// The attack's own log, as written next to the recovered key.
inline nlohmann::ordered_json attack_report_to_json(const AttackReport& r) {
    nlohmann::ordered_json j;
    j["scheme"] = std::string(scheme_name(r.scheme));
    j["key_count"] = r.key_count;
    j["solved_bits"] = r.solved_bits;
    j["hit_iteration_cap"] = r.hit_iteration_cap;
    auto rows = nlohmann::ordered_json::array();
    for (const IterationRecord& it : r.iterations)
        rows.push_back({{"iteration", it.iteration},
                        {"th", it.th},
                        {"up", it.up},
                        {"h", it.h},
                        {"ensemble", it.ensemble},
                        {"event", it.event},
                        {"accepted", it.accepted},
                        {"links_left", it.links_left}});
    j["iterations"] = std::move(rows);
    j["accepted_links"] = r.accepted_links;
    return j;
}

inline AttackReport attack_report_from_json(const std::string& text) {
    try {
        auto j = nlohmann::json::parse(text);
        AttackReport r;
        r.scheme = scheme_from_name(j.at("scheme").get<std::string>());
        r.key_count = j.at("key_count");
        r.solved_bits = j.at("solved_bits");
        r.hit_iteration_cap = j.at("hit_iteration_cap");
        for (const auto& it : j.at("iterations")) {
            IterationRecord rec;
            rec.iteration = it.at("iteration");
            rec.th = it.at("th");
            rec.up = it.at("up");
            rec.h = it.at("h");
            rec.ensemble = it.at("ensemble");
            rec.event = it.at("event").get<std::string>();
            rec.accepted = it.at("accepted").get<std::vector<std::size_t>>();
            rec.links_left = it.at("links_left");
            r.iterations.push_back(std::move(rec));
        }
        r.accepted_links = j.at("accepted_links").get<std::vector<std::size_t>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("bad attack report: ") + e.what());
    }
}

/// Everything one evaluated run reports.
struct RunReport {
    std::string design;
    std::string scheme;
    KeyMetrics key;
    std::vector<IterationRow> iterations;
    std::optional<HdResult> hd;
};

inline constexpr const char* kIterationColumns[] = {"Attack Iteration", "th",   "up",    "h",
                                                    "C",                "W",    "Prec.", "Links Recovered",
                                                    "Links Left",       "Ensemble", "Event"};

namespace detail {

inline std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

inline std::string row_precision(const IterationRow& r) {
    if (r.correct + r.wrong == 0) return "-";
    return fixed(100.0 * static_cast<double>(r.correct) / static_cast<double>(r.correct + r.wrong), 2);
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["design"] = r.design;
    j["scheme"] = r.scheme;
    j["key"] = {{"key_count", r.key.key_count},
                {"correct", r.key.correct},
                {"wrong", r.key.wrong},
                {"undeciphered", r.key.undeciphered},
                {"precision", r.key.precision},
                {"decision_precision", r.key.decision_precision},
                {"precision_defined", r.key.precision_defined},
                {"accuracy", r.key.accuracy}};
    auto rows = nlohmann::ordered_json::array();
    for (const IterationRow& it : r.iterations)
        rows.push_back({{"iteration", it.iteration},
                        {"th", it.th},
                        {"up", it.up},
                        {"h", it.h},
                        {"ensemble", it.ensemble},
                        {"event", it.event},
                        {"correct", it.correct},
                        {"wrong", it.wrong},
                        {"links_recovered", it.links_recovered},
                        {"links_left", it.links_left}});
    j["iterations"] = std::move(rows);
    if (r.hd)
        j["hd"] = {{"hd_percent", r.hd->hd_percent},
                   {"num_keys_sampled", r.hd->num_keys_sampled},
                   {"num_patterns", r.hd->num_patterns},
                   {"incomparable", r.hd->incomparable},
                   {"exhaustive_inputs", r.hd->exhaustive_inputs},
                   {"exhaustive_keys", r.hd->exhaustive_keys}};
    else
        j["hd"] = nullptr;
    return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
    try {
        RunReport r;
        r.design = j.at("design").get<std::string>();
        r.scheme = j.at("scheme").get<std::string>();
        const auto& k = j.at("key");
        r.key.key_count = k.at("key_count");
        r.key.correct = k.at("correct");
        r.key.wrong = k.at("wrong");
        r.key.undeciphered = k.at("undeciphered");
        r.key.precision = k.at("precision");
        r.key.decision_precision = k.at("decision_precision");
        r.key.precision_defined = k.at("precision_defined");
        r.key.accuracy = k.at("accuracy");
        for (const auto& it : j.at("iterations")) {
            IterationRow row;
            row.iteration = it.at("iteration");
            row.th = it.at("th");
            row.up = it.at("up");
            row.h = it.at("h");
            row.ensemble = it.at("ensemble");
            row.event = it.at("event").get<std::string>();
            row.correct = it.at("correct");
            row.wrong = it.at("wrong");
            row.links_recovered = it.at("links_recovered");
            row.links_left = it.at("links_left");
            r.iterations.push_back(std::move(row));
        }
        if (!j.at("hd").is_null()) {
            const auto& h = j.at("hd");
            HdResult hd;
            hd.hd_percent = h.at("hd_percent");
            hd.num_keys_sampled = h.at("num_keys_sampled");
            hd.num_patterns = h.at("num_patterns");
            hd.incomparable = h.at("incomparable");
            hd.exhaustive_inputs = h.at("exhaustive_inputs");
            hd.exhaustive_keys = h.at("exhaustive_keys");
            r.hd = hd;
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("bad report: ") + e.what());
    }
}

inline std::string write_report_json(const RunReport& r) { return report_to_json(r).dump(2) + "\n"; }

inline RunReport parse_report_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(0, std::string("report is not JSON: ") + e.what());
    }
    return report_from_json(j);
}

/// Iteration table as CSV; the header is always present.
inline std::string write_iterations_csv(const std::vector<IterationRow>& rows) {
    std::ostringstream out;
    for (std::size_t i = 0; i < std::size(kIterationColumns); ++i) out << (i ? "," : "") << kIterationColumns[i];
    out << "\n";
    for (const IterationRow& r : rows)
        out << r.iteration << ',' << detail::fixed(r.th, 1) << ',' << detail::fixed(r.up, 1) << ',' << r.h << ','
            << r.correct << ',' << r.wrong << ',' << detail::row_precision(r) << ',' << r.links_recovered << ','
            << r.links_left << ',' << (r.ensemble ? 1 : 0) << ',' << r.event << "\n";
    return out.str();
}

inline std::vector<IterationRow> parse_iterations_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError(1, "missing CSV header");
    std::vector<IterationRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != std::size(kIterationColumns)) throw ParseError(line_no, "wrong number of CSV fields");
        try {
            IterationRow r;
            r.iteration = std::stoul(f[0]);
            r.th = std::stod(f[1]);
            r.up = std::stod(f[2]);
            r.h = std::stoul(f[3]);
            r.correct = std::stoul(f[4]);
            r.wrong = std::stoul(f[5]);
            r.links_recovered = std::stoul(f[7]);
            r.links_left = std::stoul(f[8]);
            r.ensemble = f[9] == "1";
            r.event = f[10];
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw ParseError(line_no, "bad CSV number");
        }
    }
    return rows;
}

/// Aligned plain-text summary.
inline std::string write_report_text(const RunReport& r) {
    std::ostringstream out;
    out << "design " << r.design << " (" << r.scheme << ")\n";
    out << "key bits " << r.key.key_count << ": correct " << r.key.correct << ", wrong " << r.key.wrong
        << ", undeciphered " << r.key.undeciphered << "\n";
    out << "precision " << detail::fixed(r.key.precision, 2) << "%, accuracy " << detail::fixed(r.key.accuracy, 2)
        << "%, precision over decided bits "
        << (r.key.precision_defined ? detail::fixed(r.key.decision_precision, 2) + "%" : "n/a (no decisions)") << "\n";
    if (r.hd)
        out << "hamming distance " << detail::fixed(r.hd->hd_percent, 2) << "% over " << r.hd->num_keys_sampled
            << " keys x " << r.hd->num_patterns << " patterns"
            << (r.hd->incomparable ? ", " + std::to_string(r.hd->incomparable) + " cyclic completions" : "") << "\n";
    if (!r.iterations.empty()) {
        out << std::setw(5) << "iter" << std::setw(6) << "th" << std::setw(6) << "up" << std::setw(4) << "h"
            << std::setw(5) << "C" << std::setw(5) << "W" << std::setw(9) << "prec" << std::setw(7) << "left"
            << "  event\n";
        for (const IterationRow& it : r.iterations)
            out << std::setw(5) << it.iteration << std::setw(6) << detail::fixed(it.th, 1) << std::setw(6)
                << detail::fixed(it.up, 1) << std::setw(4) << it.h << std::setw(5) << it.correct << std::setw(5)
                << it.wrong << std::setw(9) << detail::row_precision(it) << std::setw(7) << it.links_left << "  "
                << it.event << (it.ensemble ? " (ensemble)" : "") << "\n";
    }
    return out.str();
}

}  // namespace relink
