// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Every subcommand prints a human-readable table on the
// output stream; metric results are also emitted as JSON lines (to --out when
// given, otherwise after the table). Wall-clock fields are only written with
// --timing so that repeated runs produce identical bytes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lmeec/grad_check.hpp"
#include "lmeec/harness.hpp"
#include "lmeec/io.hpp"
#include "lmeec/metrics.hpp"

namespace lmeec::cli {

namespace detail {

inline std::vector<std::size_t> parse_size_list(const std::string& text, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw std::invalid_argument(std::string(what) + ": bad integer '" + item + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
    return out;
}

inline std::vector<memory::PolicyKind> parse_policies(const std::string& text) {
    if (text == "all") return harness::all_policies();
    std::vector<memory::PolicyKind> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(memory::parse_policy_kind(item));
    if (out.empty()) throw std::invalid_argument("--policy: empty list");
    return out;
}

inline std::string fmt(const std::optional<double>& v) {
    if (!v) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}

inline void print_table(std::ostream& os, const std::vector<io::ResultRow>& rows) {
    os << std::left << std::setw(16) << "experiment" << std::setw(12) << "policy" << std::setw(5) << "M" << std::setw(6)
       << "T" << std::setw(9) << "IoU" << std::setw(9) << "LE" << std::setw(9) << "CA" << std::setw(9) << "BA"
       << "assoc\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(16) << r.experiment << std::setw(12) << r.policy.value_or("-") << std::setw(5)
           << (r.M ? std::to_string(*r.M) : "-") << std::setw(6) << (r.T ? std::to_string(*r.T) : "-") << std::setw(9)
           << fmt(r.summary.mean_iou) << std::setw(9) << fmt(r.summary.mean_le) << std::setw(9)
           << fmt(r.summary.mean_ca) << std::setw(9) << fmt(r.summary.ba) << fmt(r.summary.association) << "\n";
    }
    os << std::right;
}

inline void emit(std::ostream& out, const std::vector<io::ResultRow>& rows, const std::string& path) {
    print_table(out, rows);
    if (path.empty()) {
        out << io::to_jsonl(rows);
    } else {
        io::write_file_atomic(path, io::to_jsonl(rows));
    }
}

inline io::ResultRow row_of(const std::string& experiment, const harness::PolicyRun& run, bool timing) {
    io::ResultRow row;
    row.experiment = experiment;
    row.policy = run.policy;
    if (run.M) row.M = run.M;
    row.T = run.T;
    row.summary = run.summary;
    if (timing) row.wall_time_s = run.seconds;
    return row;
}

}  // namespace detail

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

inline int moe_check(const Streams& io, std::uint64_t seed, std::size_t seeds, const std::string& dims, double tol,
                     double step, std::size_t hidden) {
    const auto d = detail::parse_size_list(dims, "--dims");
    if (d.size() != 3) throw std::invalid_argument("--dims expects h,w,c");
    bool pass = true;
    double total = 0.0;
    for (std::size_t n = 0; n < seeds; ++n) {
        moe::GradCheckConfig cfg;
        cfg.seed = seed + n;
        cfg.h = d[0];
        cfg.w = d[1];
        cfg.c = d[2];
        cfg.r = cfg.s = hidden;
        cfg.tol = tol;
        cfg.step = step;
        const auto rep = moe::grad_check(cfg);
        moe::print_report(io.out, cfg, rep);
        pass = pass && rep.pass;
        total += rep.seconds;
    }
    if (seeds > 1) io.out << (pass ? "all seeds pass" : "some seeds FAIL") << "\n";
    return pass ? 0 : 1;
}

inline int gen_data(const Streams& io, const std::string& spec_path, const std::string& out_path,
                    std::optional<std::uint64_t> seed) {
    auto spec = io::read_stream_spec(spec_path);
    if (seed) spec.seed = *seed;
    const auto records = harness::gen_stream(spec);
    io::write_stream(records, out_path);
    std::size_t visible = 0;
    for (const auto& r : records) visible += r.exo_gt_mask.any();
    io.out << "wrote " << records.size() << " frames (" << visible << " with the object visible), grid " << spec.h
           << "x" << spec.w << "x" << spec.C << " -> " << out_path << "\n";
    return 0;
}

inline int compress_bench(const Streams& io, const std::string& stream_path, const std::string& policies,
                          std::size_t M, const std::string& out_path, std::uint64_t seed, bool oracle, bool timing) {
    if (M == 0) throw std::invalid_argument("--memory must be >= 1");
    const auto records = io::read_stream(stream_path);
    const auto runs = harness::run_ablation(records, M, detail::parse_policies(policies), {}, seed);
    std::vector<io::ResultRow> rows;
    for (const auto& run : runs) rows.push_back(detail::row_of("compress-bench", run, timing));
    if (oracle) rows.push_back(detail::row_of("compress-bench", harness::run_unbounded(records), timing));
    detail::emit(io.out, rows, out_path);
    return 0;
}

inline int eval(const Streams& io, const std::string& pred_path, const std::string& gt_path,
                const std::string& out_path) {
    const auto pred = io::read_manifest(pred_path);
    const auto gt = io::read_manifest(gt_path);
    std::map<std::pair<memory::View, std::uint64_t>, const io::ManifestRecord*> by_key;
    for (const auto& p : pred) by_key[{p.view, p.frame_id}] = &p;
    std::map<memory::View, std::vector<metrics::FramePairResult>> per_view;
    for (const auto& g : gt) {
        const auto it = by_key.find({g.view, g.frame_id});
        if (it == by_key.end()) {
            throw std::invalid_argument("eval: no prediction for " + std::string(memory::to_string(g.view)) +
                                        " frame " + std::to_string(g.frame_id));
        }
        const io::ManifestRecord& p = *it->second;
        auto load = [](const io::ManifestRecord& r) {
            Mask m = io::read_mask(r.mask_path);
            if (m.width() != r.image_w || m.height() != r.image_h) {
                throw std::invalid_argument("eval: " + r.mask_path.string() + " is " + std::to_string(m.width()) +
                                            "x" + std::to_string(m.height()) + ", manifest says " +
                                            std::to_string(r.image_w) + "x" + std::to_string(r.image_h));
            }
            return m;
        };
        per_view[g.view].push_back(metrics::evaluate_frame(load(p), load(g)));
        by_key.erase(it);
    }
    if (!by_key.empty()) {
        const auto& [key, rec] = *by_key.begin();
        throw std::invalid_argument("eval: prediction for " + std::string(memory::to_string(key.first)) + " frame " +
                                    std::to_string(key.second) + " has no ground truth");
    }
    std::vector<io::ResultRow> rows;
    for (const auto& [view, frames] : per_view) {
        io::ResultRow row;
        row.experiment = std::string("eval-") + memory::to_string(view);
        row.T = frames.size();
        row.summary = metrics::aggregate(frames);
        rows.push_back(std::move(row));
    }
    detail::emit(io.out, rows, out_path);
    return 0;
}

inline int train_toy(const Streams& io, std::uint64_t seed, std::optional<std::size_t> steps,
                     std::optional<double> step_size, const std::string& task, const std::string& params_out,
                     const std::string& out_path) {
    harness::ToyTaskSpec spec;
    if (task == "sum") {
        spec.target = harness::ToyTarget::sum;
    } else if (task != "gated") {
        throw std::invalid_argument("--task must be sum or gated");
    }
    if (steps) spec.steps = *steps;
    if (step_size) spec.step_size = *step_size;
    const auto res = harness::train_moe_toy(seed, spec);
    auto line = [&io](const char* name, double v) {
        io.out << std::left << std::setw(28) << name << std::scientific << std::setprecision(6) << v << "\n";
        io.out << std::defaultfloat << std::right;
    };
    io.out << "train-toy task=" << harness::to_string(spec.target) << " seed=" << seed << " steps=" << spec.steps
           << " step_size=" << spec.step_size << "\n";
    line("initial loss", res.loss_curve.front());
    line("mv-moe (trained)", res.mse_moe);
    line("simple add", res.mse_add);
    line("mem only (single expert)", res.mse_mem_only);
    line("view only (single expert)", res.mse_view_only);
    nlohmann::ordered_json j;
    j["experiment"] = "train-toy";
    j["task"] = harness::to_string(spec.target);
    j["seed"] = seed;
    j["steps"] = spec.steps;
    j["step_size"] = spec.step_size;
    j["diverged"] = res.diverged;
    j["mse_moe"] = res.mse_moe;
    j["mse_add"] = res.mse_add;
    j["mse_mem_only"] = res.mse_mem_only;
    j["mse_view_only"] = res.mse_view_only;
    j["initial_loss"] = res.loss_curve.front();
    if (out_path.empty()) {
        io.out << j.dump() << "\n";
    } else {
        io::write_file_atomic(out_path, j.dump() + "\n");
    }
    if (!params_out.empty()) io::write_params(res.params, params_out);
    if (res.diverged) {
        io.err << "train-toy: loss diverged with step size " << spec.step_size << "\n";
        return 1;
    }
    return 0;
}

inline int sweep(const Streams& io, const std::string& spec_path, const std::string& memory_list,
                 const std::string& frame_list, const std::string& policies, const std::string& out_path,
                 bool oracle, bool timing) {
    const auto spec = io::read_stream_spec(spec_path);
    const auto Ms = detail::parse_size_list(memory_list, "--memory");
    for (std::size_t M : Ms) {
        if (M == 0) throw std::invalid_argument("--memory entries must be >= 1");
    }
    const std::vector<std::size_t> Ts = frame_list.empty() ? std::vector<std::size_t>{}
                                                            : detail::parse_size_list(frame_list, "--frames");
    const auto cells = harness::sweep(spec, Ms, Ts, detail::parse_policies(policies));
    std::vector<io::ResultRow> rows;
    std::optional<std::size_t> last_T;
    for (const auto& cell : cells) {
        for (const auto& run : cell.runs) rows.push_back(detail::row_of("sweep", run, timing));
        if (oracle && last_T != cell.T) {
            harness::StreamSpec s = spec;
            s.T = cell.T;
            rows.push_back(detail::row_of("sweep", harness::run_unbounded(harness::gen_stream(s)), timing));
            last_T = cell.T;
        }
    }
    detail::emit(io.out, rows, out_path);
    return 0;
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
    CLI::App app{"lmeec: memory-view fusion, memory compression and correspondence metrics"};
    app.name("lmeec");
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    const Streams io{out, err};

    int code = 0;

    auto* mc = app.add_subcommand("moe-check", "finite-difference check of the fusion gradients");
    std::uint64_t mc_seed = 0;
    std::size_t mc_seeds = 1, mc_hidden = 0;
    std::string mc_dims = "4,4,4";
    double mc_tol = 1e-4, mc_step = 1e-5;
    mc->add_option("--seed", mc_seed, "first seed");
    mc->add_option("--seeds", mc_seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
    mc->add_option("--dims", mc_dims, "h,w,c");
    mc->add_option("--tol", mc_tol, "relative error tolerance")->check(CLI::PositiveNumber);
    mc->add_option("--step", mc_step, "finite-difference step")->check(CLI::PositiveNumber);
    mc->add_option("--hidden", mc_hidden, "router hidden width r = s (0 = max(4, c/2))");
    mc->callback([&] { code = moe_check(io, mc_seed, mc_seeds, mc_dims, mc_tol, mc_step, mc_hidden); });

    auto* gd = app.add_subcommand("gen-data", "generate a synthetic two-view stream");
    std::string gd_spec, gd_out;
    std::optional<std::uint64_t> gd_seed;
    gd->add_option("--spec", gd_spec, "stream spec (JSON)")->required();
    gd->add_option("--out", gd_out, "output stream file")->required();
    gd->add_option("--seed", gd_seed, "override the spec seed");
    gd->callback([&] { code = gen_data(io, gd_spec, gd_out, gd_seed); });

    auto* cb = app.add_subcommand("compress-bench", "run the compression policies over a stream");
    std::string cb_stream, cb_policy = "all", cb_out;
    std::size_t cb_memory = 6;
    std::uint64_t cb_seed = 0;
    bool cb_oracle = false, cb_timing = false;
    cb->add_option("--stream", cb_stream, "stream file")->required();
    cb->add_option("--policy", cb_policy, "ours, fifo, cluster, iou_select, a comma list, or all");
    cb->add_option("--memory", cb_memory, "capacity M");
    cb->add_option("--seed", cb_seed, "cluster seed");
    cb->add_option("--out", cb_out, "JSON lines output");
    cb->add_flag("--oracle", cb_oracle, "also report unbounded memory");
    cb->add_flag("--timing", cb_timing, "record wall time");
    cb->callback([&] {
        code = compress_bench(io, cb_stream, cb_policy, cb_memory, cb_out, cb_seed, cb_oracle, cb_timing);
    });

    auto* ev = app.add_subcommand("eval", "score predicted masks against ground truth");
    std::string ev_pred, ev_gt, ev_out;
    ev->add_option("--pred", ev_pred, "prediction manifest")->required();
    ev->add_option("--gt", ev_gt, "ground-truth manifest")->required();
    ev->add_option("--out", ev_out, "JSON lines output");
    ev->callback([&] { code = eval(io, ev_pred, ev_gt, ev_out); });

    auto* tt = app.add_subcommand("train-toy", "train the fusion module on a toy target");
    std::uint64_t tt_seed = 0;
    std::optional<std::size_t> tt_steps;
    std::optional<double> tt_step_size;
    std::string tt_task = "gated", tt_params, tt_out;
    tt->add_option("--seed", tt_seed, "data and init seed");
    tt->add_option("--steps", tt_steps, "gradient steps");
    tt->add_option("--step-size", tt_step_size, "fixed step size")->check(CLI::PositiveNumber);
    tt->add_option("--task", tt_task, "gated or sum");
    tt->add_option("--params-out", tt_params, "write trained parameters");
    tt->add_option("--out", tt_out, "JSON lines output");
    tt->callback([&] { code = train_toy(io, tt_seed, tt_steps, tt_step_size, tt_task, tt_params, tt_out); });

    auto* sw = app.add_subcommand("sweep", "policies over a grid of memory sizes and stream lengths");
    std::string sw_spec, sw_memory = "4,6,8", sw_frames, sw_policy = "all", sw_out;
    bool sw_oracle = false, sw_timing = false;
    sw->add_option("--spec", sw_spec, "stream spec (JSON)")->required();
    sw->add_option("--memory", sw_memory, "comma list of M");
    sw->add_option("--frames", sw_frames, "comma list of T (default: the spec's T)");
    sw->add_option("--policy", sw_policy, "policies, as for compress-bench");
    sw->add_option("--out", sw_out, "JSON lines output");
    sw->add_flag("--oracle", sw_oracle, "also report unbounded memory per T");
    sw->add_flag("--timing", sw_timing, "record wall time");
    sw->callback([&] { code = sweep(io, sw_spec, sw_memory, sw_frames, sw_policy, sw_out, sw_oracle, sw_timing); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return code;
}

}  // namespace lmeec::cli
