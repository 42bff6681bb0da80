#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "csv.hpp"
#include "dataset_io.hpp"

namespace edis {

/// Global state of one CLI invocation.
struct CommandContext {
    RunConfig config;
    std::uint64_t seed = 0;
    std::filesystem::path out = ".";
    std::ostream* log = &std::cout;
};

namespace detail {

inline void prepare_out(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw ValidationError("cannot create output directory '" + dir.string() + "'");
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw ValidationError("cannot open '" + p.string() + "' for writing");
    return os;
}

/// The resolved config with the command line that produced it.
inline void echo_config(const CommandContext& ctx, const std::string& command, const std::string& args) {
    auto os = open_out(ctx.out / ("config." + command + ".txt"));
    os << "; edis " << command << " --seed " << ctx.seed << (args.empty() ? "" : " ") << args << '\n';
    os << "; every random stream is seeded by mix64(root seed, hash of its purpose tag), see derive_seed\n";
    write_config(os, ctx.config);
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation (zero for a single value).
inline double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline std::uint64_t run_seed(const CommandContext& ctx, std::size_t i) { return ctx.seed + i; }

}  // namespace detail

/// Offline dataset plus a per-column statistics sidecar.
inline void cmd_gen_data(const CommandContext& ctx) {
    ctx.config.validate();
    detail::prepare_out(ctx.out);
    const ExperimentConfig& e = ctx.config.exp;
    const Dataset d = generate_offline_dataset(e.spec, e.behavior, e.offline_n, derive_seed(ctx.seed, "offline"));
    {
        auto os = detail::open_out(ctx.out / "dataset.txt");
        write_dataset(os, d);
    }
    auto os = detail::open_out(ctx.out / "dataset_stats.csv");
    write_stats(os, d.stats(), tuple_column_names(d.dim_s, d.dim_a));
    detail::echo_config(ctx, "gen-data", "");
    *ctx.log << "wrote " << d.size() << " transitions to " << (ctx.out / "dataset.txt").string() << '\n';
}

inline void cmd_pretrain(const CommandContext& ctx, const std::string& data_path) {
    ctx.config.validate();
    const Dataset d = load_dataset(data_path);
    detail::prepare_out(ctx.out);
    AgentConfig ac = ctx.config.exp.agent;
    ac.seed = derive_seed(ctx.seed, "agent");
    const PretrainResult r = pretrain_offline(d, ctx.config.exp.spec, ac);
    Checkpoint ck;
    r.q.save(ck);
    ck.save((ctx.out / "q.ckpt").string());
    auto os = detail::open_out(ctx.out / "pretrain_trace.csv");
    os << "sweep,max_delta\n";
    for (std::size_t i = 0; i < r.trace.size(); ++i) os << i + 1 << ',' << detail::fixed6(r.trace[i]) << '\n';
    detail::echo_config(ctx, "pretrain", "--data " + data_path);
    const double ret = evaluate_policy(ctx.config.exp.spec, r.q, ac.eval_episodes, derive_seed(ac.seed, "eval"));
    *ctx.log << "pretrained on " << d.size() << " transitions, greedy return " << detail::fixed6(ret) << '\n';
}

inline void cmd_finetune(const CommandContext& ctx, const std::string& q_path, const std::string& data_path, DataSource source) {
    ctx.config.validate();
    const TabularQ q0 = TabularQ::load(Checkpoint::load(q_path));
    const Dataset offline = load_dataset(data_path);
    const MazeSpec& spec = ctx.config.exp.spec;
    if (q0.width() != spec.width || q0.height() != spec.height)
        throw ValidationError("finetune: Q checkpoint grid does not match the configured maze");
    detail::prepare_out(ctx.out);
    AgentConfig ac = ctx.config.exp.agent;
    ac.seed = derive_seed(ctx.seed, "agent");
    const FinetuneResult r = finetune_online(spec, q0, offline, ac, source, ctx.config.resolved_sources());
    {
        auto os = detail::open_out(ctx.out / "metrics.csv");
        write_metrics(os, r.trace);
    }
    Checkpoint ck;
    r.q.save(ck);
    ck.save((ctx.out / "q_final.ckpt").string());
    detail::echo_config(ctx, "finetune", "--q " + q_path + " --data " + data_path + " --source " + source_name(source));
    *ctx.log << "finetuned with source " << source_name(source) << ": " << r.refills << " refills, final return "
             << detail::fixed6(r.trace.empty() ? 0.0 : r.trace.back().eval_return) << '\n';
}

inline constexpr const char* kTableHeader =
    "source,estimator,seeds,ok,state_js_mean,state_js_std,action_mse_mean,action_mse_std,transition_mse_mean,"
    "transition_mse_std,status";

/// Per-seed rows in `divergence_runs.csv` and mean/std rows in `divergence_table.csv`.
inline void cmd_divergence_table(const CommandContext& ctx, const std::vector<std::string>& sources) {
    ctx.config.validate();
    detail::require(!sources.empty(), "divergence-table: no sources given");
    for (const auto& s : sources) check_source(s);
    detail::prepare_out(ctx.out);
    const ExperimentConfig cfg = ctx.config.resolved();
    std::vector<std::vector<DivergenceReport>> per_source(sources.size());
    auto runs = detail::open_out(ctx.out / "divergence_runs.csv");
    runs << "seed," << DivergenceReport::kCsvHeader << ",error\n";
    for (std::size_t i = 0; i < ctx.config.seeds; ++i) {
        const std::uint64_t seed = detail::run_seed(ctx, i);
        const SeedReports rep = seed_reports(cfg, seed, sources, {});
        for (std::size_t k = 0; k < sources.size(); ++k) {
            const SourceOutcome& o = rep.sources[k];
            if (o.report) {
                per_source[k].push_back(*o.report);
                runs << seed << ',' << o.report->csv_row() << ",\n";
            } else {
                std::string msg = o.error;
                std::replace(msg.begin(), msg.end(), ',', ';');
                runs << seed << ',' << o.source << ",exact,,,,0," << msg << '\n';
            }
            *ctx.log << "seed " << seed << ' ' << o.source << ": "
                     << (o.report ? "state_js " + detail::fixed6(o.report->state_js) : "failed (" + o.error + ")") << '\n';
        }
    }
    runs.close();
    auto os = detail::open_out(ctx.out / "divergence_table.csv");
    os << kTableHeader << '\n';
    for (std::size_t k = 0; k < sources.size(); ++k) {
        const auto& rs = per_source[k];
        os << sources[k] << ",exact," << ctx.config.seeds << ',' << rs.size();
        if (rs.empty()) {
            os << ",,,,,,,failed\n";
            continue;
        }
        std::vector<double> js, act, tr;
        for (const auto& r : rs) js.push_back(r.state_js), act.push_back(r.action_mse), tr.push_back(r.transition_mse);
        for (const auto* v : {&js, &act, &tr}) os << ',' << detail::fixed6(detail::mean_of(*v)) << ',' << detail::fixed6(detail::std_of(*v));
        os << ',' << (rs.size() == ctx.config.seeds ? "ok" : "partial") << '\n';
    }
    std::string list;
    for (const auto& s : sources) list += (list.empty() ? "" : ",") + s;
    detail::echo_config(ctx, "divergence-table", "--sources " + list);
}

/// EDIS generation with energy terms dropped, one row per (seed, drop) in `ablation.csv`.
inline void cmd_ablate_energy(const CommandContext& ctx, const std::vector<EnergyDrop>& drops) {
    ctx.config.validate();
    detail::require(!drops.empty(), "ablate-energy: no energy term given");
    detail::prepare_out(ctx.out);
    const ExperimentConfig cfg = ctx.config.resolved();
    auto os = detail::open_out(ctx.out / "ablation.csv");
    os << "seed,drop," << DivergenceReport::kCsvHeader << '\n';
    for (std::size_t i = 0; i < ctx.config.seeds; ++i) {
        const std::uint64_t seed = detail::run_seed(ctx, i);
        const SeedReports rep = seed_reports(cfg, seed, {}, drops);
        for (const auto& [drop, r] : rep.ablations) {
            os << seed << ',' << drop_name(drop) << ',' << r.csv_row() << '\n';
            *ctx.log << "seed " << seed << " drop " << drop_name(drop) << ": state_js " << detail::fixed6(r.state_js)
                     << " action_mse " << detail::fixed6(r.action_mse) << " transition_mse "
                     << detail::fixed6(r.transition_mse) << '\n';
        }
    }
    std::string list;
    for (EnergyDrop d : drops) list += std::string(list.empty() ? "" : ",") + drop_name(d);
    detail::echo_config(ctx, "ablate-energy", "--drop " + list);
}

/// Greedy returns of a Q checkpoint, one row per episode in `eval.csv`.
inline double cmd_eval_policy(const CommandContext& ctx, const std::string& q_path, std::size_t episodes) {
    ctx.config.validate();
    detail::require(episodes >= 1, "eval-policy: need at least one episode");
    const TabularQ q = TabularQ::load(Checkpoint::load(q_path));
    const MazeSpec& spec = ctx.config.exp.spec;
    if (q.width() != spec.width || q.height() != spec.height)
        throw ValidationError("eval-policy: Q checkpoint grid does not match the configured maze");
    detail::prepare_out(ctx.out);
    const auto returns = episode_returns(spec, q, episodes, derive_seed(ctx.seed, "eval-policy"));
    auto os = detail::open_out(ctx.out / "eval.csv");
    os << "episode,return\n";
    for (std::size_t i = 0; i < returns.size(); ++i) os << i << ',' << detail::fixed6(returns[i]) << '\n';
    detail::echo_config(ctx, "eval-policy", "--q " + q_path + " --episodes " + std::to_string(episodes));
    const double mean = detail::mean_of(returns);
    *ctx.log << "mean return over " << episodes << " episodes: " << detail::fixed6(mean) << " (optimal "
             << detail::fixed6(spec.optimal_return()) << ")\n";
    return mean;
}

}  // namespace edis
