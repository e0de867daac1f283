#pragma once

// Command-line front end: lock, prepare, train, attack, eval and pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "relink/attack.hpp"
#include "relink/attack_graph.hpp"
#include "relink/bench.hpp"
#include "relink/dataset.hpp"
#include "relink/evalkit.hpp"
#include "relink/gnn.hpp"
#include "relink/key.hpp"
#include "relink/lock_meta.hpp"
#include "relink/locking.hpp"
#include "relink/parallel.hpp"
#include "relink/random.hpp"
#include "relink/simulate.hpp"

namespace relink::cli {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Writes through a temporary file in the same directory and renames it into place.
inline void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + tmp.string() + "'");
        out << bytes;
        out.flush();
        if (!out) throw ValidationError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
}

inline Netlist load_bench(const fs::path& path) { return parse_bench(read_file(path), path.stem().string()); }

inline ObfuscatedDesign load_obfuscated(const fs::path& bench, const fs::path& meta) {
    ObfuscatedDesign d{load_bench(bench), {}};
    d.meta = parse_meta(read_file(meta), d.netlist);
    return d;
}

struct Global {
    std::uint64_t seed = 1;
    std::size_t threads = default_threads();
    bool paper_scale = false;
};

// Seed streams per stage, so changing one stage's inputs leaves the others alone.
enum Stream : std::uint64_t { kLockStream = 1, kDatasetStream = 2, kTrainStream = 3, kEvalStream = 4 };

struct LockArgs {
    std::string in, out, meta, key_out;
    std::string scheme = "mux";
    std::size_t key_size = 64, keyrbs = 1, size = 8;
};

inline void run_lock(const Global& g, const LockArgs& a, std::ostream& log) {
    Netlist original = load_bench(a.in);
    const std::uint64_t seed = derive_seed(g.seed, kLockStream);
    LockedDesign d = scheme_from_name(a.scheme) == LockScheme::InterLock
                         ? lock_interlock(original, a.keyrbs, a.size, seed)
                         : lock_random_mux(original, a.key_size, seed);
    write_file(a.out, write_bench(d.netlist()));
    write_file(a.meta, write_meta(d.design));
    write_file(a.key_out, write_key(d.correct_key));
    log << "locked " << original.name() << " with " << d.correct_key.size() << " key bits\n";
}

struct PrepareArgs {
    std::string locked, meta, graph_out, dataset_out, library;
    std::string scenario = "self";
    std::size_t h = 2, max_observable = 0, max_nodes_per_hop = 0;
    double validation = 0.1;
};

/// Library list: one `<bench> <meta> <key>` triple per line, paths relative to the list.
inline std::vector<LibraryDesign> load_library(const fs::path& list) {
    std::vector<LibraryDesign> lib;
    std::istringstream in(read_file(list));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string b, m, k;
        if (!(ls >> b >> m >> k)) throw ValidationError("library line needs <bench> <meta> <key>: " + line);
        auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : list.parent_path() / p; };
        ObfuscatedDesign d = load_obfuscated(rel(b), rel(m));
        GraphBuild build = build_attack_graph(d);
        KeyAssignment key = parse_key(read_file(rel(k)));
        auto truth = candidate_truth(build.candidates, key);
        lib.push_back({std::move(build.graph), std::move(build.candidates), std::move(truth)});
    }
    if (lib.empty()) throw ValidationError("library list '" + list.string() + "' is empty");
    return lib;
}

inline void run_prepare(const Global& g, const PrepareArgs& a, std::ostream& log) {
    ObfuscatedDesign d = load_obfuscated(a.locked, a.meta);
    GraphBuild build = build_attack_graph(d);
    const Scenario scenario = scenario_from_name(a.scenario);
    std::vector<LibraryDesign> lib;
    if (scenario == Scenario::CircuitLibrary) {
        if (a.library.empty()) throw ValidationError("the library scenario needs --library");
        lib = load_library(a.library);
    }
    DatasetOptions opt;
    opt.h = a.h;
    opt.validation_fraction = a.validation;
    opt.seed = derive_seed(g.seed, kDatasetStream);
    opt.max_observable = a.max_observable;
    opt.max_nodes_per_hop = a.max_nodes_per_hop;
    opt.threads = g.threads;
    Dataset ds = build_dataset(build.graph, build.candidates, scenario, lib, opt);
    write_file(a.graph_out, write_graph(build));
    write_file(a.dataset_out, write_dataset(ds));
    log << "prepared " << ds.train.size() << " training, " << ds.validation.size() << " validation and "
        << ds.test.size() << " test samples\n";
}

struct TrainArgs {
    std::string dataset, model_out, log_out;
    std::size_t epochs = 50, batch_size = 50;
    double learning_rate = 1e-4;
    std::string select_by = "loss";
};

inline SelectBy select_from_name(const std::string& s) {
    if (s == "loss") return SelectBy::Loss;
    if (s == "accuracy") return SelectBy::Accuracy;
    if (s == "auc") return SelectBy::Auc;
    throw ValidationError("unknown selection metric '" + s + "'");
}

inline void run_train(const Global& g, const TrainArgs& a, std::ostream& log) {
    Dataset ds = parse_dataset(read_file(a.dataset));
    GnnConfig c;
    c.epochs = a.epochs;
    c.batch_size = a.batch_size;
    c.learning_rate = a.learning_rate;
    c.select_by = select_from_name(a.select_by);
    c.h_train = ds.h;
    c.drnl_cap = ds.drnl_cap;
    c.seed = derive_seed(g.seed, kTrainStream);
    c.threads = g.threads;
    TrainResult r = train(c, ds.train, ds.validation, [&](const EpochRecord& e) {
        log << "epoch " << e.epoch << " loss " << e.train_loss << " val_acc " << e.val_accuracy << "\n";
    });
    write_file(a.model_out, write_model(r.model));
    if (!a.log_out.empty()) write_file(a.log_out, format_log(r.log));
    log << "best epoch " << r.best_epoch << "\n";
}

struct AttackArgs {
    std::string scheme, graph, model, key_out, report, locked, meta, design_out;
    std::size_t max_nodes_per_hop = 0;
    std::size_t late_hops = 3;
};

inline void run_attack_cmd(const Global& g, const AttackArgs& a, std::ostream& log) {
    GraphBuild build = parse_graph(read_file(a.graph));
    GnnModel model = read_model(read_file(a.model));
    AttackOptions opt;
    opt.threads = g.threads;
    opt.max_nodes_per_hop = a.max_nodes_per_hop;
    opt.late_hops = a.late_hops;
    AttackResult r = run_attack(scheme_from_name(a.scheme), build.graph, build.candidates, model, opt);
    write_file(a.key_out, write_key(r.key));
    if (!a.report.empty()) write_file(a.report, attack_report_to_json(r.report).dump(2) + "\n");
    if (!a.design_out.empty()) {
        if (a.locked.empty() || a.meta.empty()) throw ValidationError("--design-out needs --locked and --meta");
        write_file(a.design_out, write_bench(reconstruct_design(load_obfuscated(a.locked, a.meta), r.key)));
    }
    log << "resolved " << r.report.solved_bits << " of " << r.report.key_count << " key bits in "
        << r.report.seconds << " s\n";
}

struct EvalArgs {
    std::string original, locked, meta, key, truth, graph, attack_report, report_out, csv_out, text_out;
    bool identity_check = false;
};

/// Whether the locked design under `key` behaves like `original`.
inline bool identity_holds(const Global& g, const Netlist& original, const ObfuscatedDesign& locked,
                           const KeyAssignment& key) {
    if (original.inputs().size() <= 24) return equivalent_exhaustive(original, nullptr, locked.netlist, &key);
    HdOptions o = g.paper_scale ? HdOptions::paper_scale() : HdOptions{};
    o.seed = derive_seed(g.seed, kEvalStream);
    Netlist r = reconstruct_design(locked, key);
    HdResult hd = hamming_distance(original, r, key, o);
    return hd.incomparable == 0 && hd.hd_percent == 0;
}

inline int run_eval(const Global& g, const EvalArgs& a, std::ostream& log) {
    if (a.identity_check) {
        if (a.original.empty() || a.locked.empty() || a.meta.empty() || a.key.empty())
            throw ValidationError("--identity-check needs --original, --locked, --meta and --key");
        const bool same = identity_holds(g, load_bench(a.original), load_obfuscated(a.locked, a.meta),
                                         parse_key(read_file(a.key)));
        log << (same ? "identity holds\n" : "designs differ\n");
        return same ? 0 : 1;
    }
    if (a.key.empty() || a.truth.empty()) throw ValidationError("eval needs --key and --truth");
    KeyAssignment key = parse_key(read_file(a.key));
    KeyAssignment truth = parse_key(read_file(a.truth));
    RunReport rep;
    rep.key = score_key(key, truth);
    if (!a.locked.empty()) rep.design = fs::path(a.locked).stem().string();
    if (!a.attack_report.empty()) {
        AttackReport ar = attack_report_from_json(read_file(a.attack_report));
        rep.scheme = std::string(scheme_name(ar.scheme));
        if (a.graph.empty()) throw ValidationError("per-iteration link decisions need --graph");
        GraphBuild build = parse_graph(read_file(a.graph));
        rep.iterations = judge_iterations(ar, candidate_truth(build.candidates, truth));
    }
    if (!a.original.empty()) {
        if (a.locked.empty() || a.meta.empty()) throw ValidationError("Hamming distance needs --locked and --meta");
        ObfuscatedDesign d = load_obfuscated(a.locked, a.meta);
        if (rep.scheme.empty()) rep.scheme = std::string(scheme_name(d.meta.scheme));
        HdOptions o = g.paper_scale ? HdOptions::paper_scale() : HdOptions{};
        o.seed = derive_seed(g.seed, kEvalStream);
        rep.hd = hamming_distance(load_bench(a.original), reconstruct_design(d, key), key, o);
    }
    if (!a.report_out.empty()) write_file(a.report_out, write_report_json(rep));
    if (!a.csv_out.empty()) write_file(a.csv_out, write_iterations_csv(rep.iterations));
    const std::string text = write_report_text(rep);
    if (!a.text_out.empty()) write_file(a.text_out, text);
    log << text;
    return 0;
}

struct PipelineArgs {
    LockArgs lock;
    PrepareArgs prepare;
    TrainArgs train;
    std::size_t late_hops = 3;
    std::string workdir = "relink_run";
};

inline int run_pipeline(const Global& g, PipelineArgs p, std::ostream& log) {
    const fs::path w = p.workdir;
    p.lock.out = (w / "locked.bench").string();
    p.lock.meta = (w / "locked.meta").string();
    p.lock.key_out = (w / "correct.key").string();
    run_lock(g, p.lock, log);

    p.prepare.locked = p.lock.out;
    p.prepare.meta = p.lock.meta;
    p.prepare.graph_out = (w / "attack.graph").string();
    p.prepare.dataset_out = (w / "dataset.txt").string();
    run_prepare(g, p.prepare, log);

    p.train.dataset = p.prepare.dataset_out;
    p.train.model_out = (w / "model.bin").string();
    p.train.log_out = (w / "train.log").string();
    run_train(g, p.train, log);

    AttackArgs at;
    at.scheme = p.lock.scheme;
    at.graph = p.prepare.graph_out;
    at.model = p.train.model_out;
    at.key_out = (w / "recovered.key").string();
    at.report = (w / "attack.json").string();
    at.locked = p.lock.out;
    at.meta = p.lock.meta;
    at.design_out = (w / "recovered.bench").string();
    at.max_nodes_per_hop = p.prepare.max_nodes_per_hop;
    at.late_hops = p.late_hops;
    run_attack_cmd(g, at, log);

    EvalArgs ev;
    ev.original = p.lock.in;
    ev.locked = p.lock.out;
    ev.meta = p.lock.meta;
    ev.key = at.key_out;
    ev.truth = p.lock.key_out;
    ev.graph = at.graph;
    ev.attack_report = at.report;
    ev.report_out = (w / "report.json").string();
    ev.csv_out = (w / "report.csv").string();
    ev.text_out = (w / "report.txt").string();
    return run_eval(g, ev, log);
}

namespace detail {

inline void add_lock_options(CLI::App* c, LockArgs& a, bool with_paths) {
    if (with_paths) {
        c->add_option("--out", a.out, "Locked BENCH output")->required();
        c->add_option("--meta", a.meta, "Lock meta output")->required();
        c->add_option("--key-out", a.key_out, "Correct key output (evaluation only)")->required();
    }
    c->add_option("--scheme", a.scheme, "mux or interlock")->check(CLI::IsMember({"mux", "interlock"}));
    c->add_option("--key-size", a.key_size, "Key bits for random MUX locking");
    c->add_option("--keyrbs", a.keyrbs, "Number of routing blocks");
    c->add_option("--size", a.size, "Routing block size N");
}

inline void add_prepare_options(CLI::App* c, PrepareArgs& a) {
    c->add_option("--scenario", a.scenario, "self or library")->check(CLI::IsMember({"self", "library"}));
    c->add_option("--library", a.library, "Library list of <bench> <meta> <key> lines");
    c->add_option("--hops", a.h, "Hop count of enclosing subgraphs");
    c->add_option("--validation", a.validation, "Validation fraction of training samples");
    c->add_option("--max-observable", a.max_observable, "Cap on positive samples per design (0 = all)");
    c->add_option("--max-nodes-per-hop", a.max_nodes_per_hop, "Subgraph growth cap per hop (0 = none)");
}

inline void add_train_options(CLI::App* c, TrainArgs& a) {
    c->add_option("--epochs", a.epochs, "Training epochs");
    c->add_option("--batch-size", a.batch_size, "Mini-batch size");
    c->add_option("--learning-rate", a.learning_rate, "Adam learning rate");
    c->add_option("--select-by", a.select_by, "Checkpoint metric: loss, accuracy or auc")
        ->check(CLI::IsMember({"loss", "accuracy", "auc"}));
}

}  // namespace detail

/// Runs the tool; returns the process exit code (0 ok, 1 failure, 2 usage).
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Lock BENCH netlists and recover their keys by link prediction", "relink"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value file; command-line flags take precedence");
    Global g;
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--threads", g.threads, "Worker threads (default: RELINK_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--paper-scale", g.paper_scale, "Use the full evaluation sample counts");

    LockArgs lock;
    auto* c_lock = app.add_subcommand("lock", "Lock a BENCH netlist");
    c_lock->add_option("--in", lock.in, "Original BENCH")->required()->check(CLI::ExistingFile);
    detail::add_lock_options(c_lock, lock, true);

    PrepareArgs prep;
    auto* c_prep = app.add_subcommand("prepare", "Build the attack graph and the sample sets");
    c_prep->add_option("--locked", prep.locked, "Locked BENCH")->required()->check(CLI::ExistingFile);
    c_prep->add_option("--meta", prep.meta, "Lock meta")->required()->check(CLI::ExistingFile);
    c_prep->add_option("--graph-out", prep.graph_out, "Attack graph output")->required();
    c_prep->add_option("--dataset-out", prep.dataset_out, "Dataset output")->required();
    detail::add_prepare_options(c_prep, prep);

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the link predictor");
    c_train->add_option("--dataset", tr.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
    c_train->add_option("--model-out", tr.model_out, "Model output")->required();
    c_train->add_option("--log-out", tr.log_out, "Training log output");
    detail::add_train_options(c_train, tr);

    AttackArgs at;
    auto* c_attack = app.add_subcommand("attack", "Recover the key from the attack graph");
    c_attack->add_option("--scheme", at.scheme, "mux or interlock")->required()->check(
        CLI::IsMember({"mux", "interlock"}));
    c_attack->add_option("--graph", at.graph, "Attack graph")->required()->check(CLI::ExistingFile);
    c_attack->add_option("--model", at.model, "Trained model")->required()->check(CLI::ExistingFile);
    c_attack->add_option("--key-out", at.key_out, "Recovered key output")->required();
    c_attack->add_option("--report", at.report, "Attack log output (JSON)");
    c_attack->add_option("--locked", at.locked, "Locked BENCH, for --design-out");
    c_attack->add_option("--meta", at.meta, "Lock meta, for --design-out");
    c_attack->add_option("--design-out", at.design_out, "Reconstructed BENCH output");
    c_attack->add_option("--max-nodes-per-hop", at.max_nodes_per_hop, "Subgraph growth cap per hop (0 = none)");
    c_attack->add_option("--late-hops", at.late_hops, "InterLock: hop count once links are accepted");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Score a recovered key against the reference");
    c_eval->add_option("--original", ev.original, "Original BENCH");
    c_eval->add_option("--locked", ev.locked, "Locked BENCH");
    c_eval->add_option("--meta", ev.meta, "Lock meta");
    c_eval->add_option("--key", ev.key, "Recovered (or correct) key");
    c_eval->add_option("--truth", ev.truth, "Reference key");
    c_eval->add_option("--graph", ev.graph, "Attack graph, for per-iteration link decisions");
    c_eval->add_option("--attack-report", ev.attack_report, "Attack log (JSON)");
    c_eval->add_option("--report-out", ev.report_out, "Report output (JSON)");
    c_eval->add_option("--csv-out", ev.csv_out, "Per-iteration table output (CSV)");
    c_eval->add_option("--text-out", ev.text_out, "Plain-text report output");
    c_eval->add_flag("--identity-check", ev.identity_check, "Check that the locked design under --key equals --original");

    PipelineArgs pipe;
    auto* c_pipe = app.add_subcommand("pipeline", "Lock, prepare, train, attack and evaluate in one go");
    c_pipe->add_option("--in", pipe.lock.in, "Original BENCH")->required()->check(CLI::ExistingFile);
    c_pipe->add_option("--workdir", pipe.workdir, "Directory for every artifact");
    detail::add_lock_options(c_pipe, pipe.lock, false);
    detail::add_prepare_options(c_pipe, pipe.prepare);
    detail::add_train_options(c_pipe, pipe.train);
    c_pipe->add_option("--late-hops", pipe.late_hops, "InterLock: hop count once links are accepted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        if (e.get_exit_code() == 0) return 0;
        err << app.help();
        return 2;
    }

    try {
        if (*c_lock) run_lock(g, lock, out);
        if (*c_prep) run_prepare(g, prep, out);
        if (*c_train) run_train(g, tr, out);
        if (*c_attack) run_attack_cmd(g, at, out);
        if (*c_eval) return run_eval(g, ev, out);
        if (*c_pipe) return run_pipeline(g, pipe, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace relink::cli
