#pragma once

#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "generator.hpp"
#include "qfunction.hpp"

namespace edis {

enum class DataSource { none, offline_replay, mlp_model, diffusion_model, edis };

inline const char* source_name(DataSource s) {
    switch (s) {
        case DataSource::none: return "none";
        case DataSource::offline_replay: return "offline";
        case DataSource::mlp_model: return "mlp";
        case DataSource::diffusion_model: return "diffusion";
        case DataSource::edis: return "edis";
    }
    return "?";
}

inline DataSource parse_source(const std::string& s) {
    for (DataSource d : {DataSource::none, DataSource::offline_replay, DataSource::mlp_model, DataSource::diffusion_model,
                         DataSource::edis})
        if (s == source_name(d)) return d;
    throw ValidationError("unknown data source '" + s + "' (expected none, offline, mlp, diffusion or edis)");
}

struct AgentConfig {
    std::size_t offline_iterations = 100;  ///< full-dataset fitted-Q sweeps
    double alpha = 0.01;                   ///< offline conservative weight; online updates use 0
    std::size_t env_steps = 4000;
    std::size_t grad_steps = 1;            ///< per env step
    std::size_t batch_size = 64;
    std::size_t retrain_interval = 2000;
    std::size_t refill = 4096;
    double synthetic_ratio = 0.5;
    double epsilon = 0.1;
    bool include_offline = false;  ///< also replay offline data in online batches
    std::size_t eval_interval = 500;
    std::size_t eval_episodes = 5;
    std::size_t positive_capacity = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(offline_iterations >= 1, "agent: offline iterations must be positive");
        detail::require(alpha >= 0, "agent: alpha must be nonnegative");
        detail::require(grad_steps >= 1 && batch_size >= 1, "agent: gradient steps and batch size must be positive");
        detail::require(retrain_interval >= 1 && refill >= 1, "agent: retrain interval and refill must be positive");
        detail::require(synthetic_ratio >= 0 && synthetic_ratio <= 1, "agent: synthetic ratio must lie in [0,1]");
        detail::require(epsilon >= 0 && epsilon <= 1, "agent: epsilon must lie in [0,1]");
        detail::require(eval_interval >= 1 && eval_episodes >= 1, "agent: evaluation interval and episodes must be positive");
        detail::require(positive_capacity >= 1, "agent: positive buffer capacity must be positive");
    }
};

/// Generative stacks and rollout settings behind the non-trivial data sources.
struct SourceConfig {
    GeneratorConfig edis;
    TransitionModelConfig model;
    std::size_t horizon = 5;
    /// Match baseline capacity to the EDIS stack (computed when 0).
    std::size_t param_budget = 0;
};

inline CellPolicy greedy_policy(const TabularQ& q) {
    return [&q](Cell c) { return greedy(q.row(static_cast<std::size_t>(c.row * q.width() + c.col))); };
}

inline QUpdateOptions update_options(const MazeSpec& spec, double alpha) {
    return {spec.gamma, alpha, spec.step_penalty / (1.0 - spec.gamma)};
}

struct PretrainResult {
    TabularQ q;
    std::vector<double> trace;  ///< max |Q change| per sweep
};

/// Pessimistic fitted-Q iteration over the whole offline dataset.
inline PretrainResult pretrain_offline(const Dataset& data, const MazeSpec& spec, const AgentConfig& cfg) {
    if (data.empty()) throw ValidationError("pretrain_offline: empty dataset");
    cfg.validate();
    PretrainResult out{TabularQ(spec), {}};
    const Batch all = batch_of(data.items);
    const QUpdateOptions opt = update_options(spec, cfg.alpha);
    for (std::size_t it = 0; it < cfg.offline_iterations; ++it) {
        const auto before = out.q.table();
        q_update(out.q, all, opt);
        double delta = 0.0;
        for (std::size_t i = 0; i < before.size(); ++i) delta = std::max(delta, std::abs(out.q.table()[i] - before[i]));
        out.trace.push_back(delta);
    }
    return out;
}

/// Undiscounted return of each greedy episode from the start.
inline std::vector<double> episode_returns(const MazeSpec& spec, const TabularQ& q, std::size_t episodes, std::uint64_t seed) {
    detail::require(episodes >= 1, "evaluate_policy: need at least one episode");
    Rng rng(seed, "evaluate");
    std::vector<double> out;
    for (std::size_t e = 0; e < episodes; ++e) {
        MazeEnv env(spec, rng);
        Transition tr;
        bool ended = false;
        double total = 0.0;
        while (!ended) {
            ended = env.step(greedy(q.values(env.state().data())), tr);
            total += tr.r;
        }
        out.push_back(total);
    }
    return out;
}

inline double evaluate_policy(const MazeSpec& spec, const TabularQ& q, std::size_t episodes, std::uint64_t seed) {
    const auto r = episode_returns(spec, q, episodes, seed);
    double total = 0.0;
    for (double v : r) total += v;
    return total / static_cast<double>(episodes);
}

struct BufferSet {
    Dataset offline;
    Dataset online;
    Dataset synthetic;  ///< the source-specific buffer (generated tuples or offline replay)
    PositiveBuffer<Transition> positive{1000};
};

struct MetricsRow {
    std::size_t env_step = 0;
    double eval_return = 0.0;
    std::optional<DivergenceReport> divergence;
};

inline constexpr const char* kMetricsHeader = "env_step,eval_return,state_js,action_mse,transition_mse";

inline void write_metrics(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << kMetricsHeader << '\n';
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f", r.env_step, r.eval_return);
        os << buf;
        if (r.divergence) {
            std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f", r.divergence->state_js, r.divergence->action_mse,
                          r.divergence->transition_mse);
            os << buf << '\n';
        } else {
            os << ",,,\n";
        }
    }
}

struct FinetuneResult {
    TabularQ q;
    std::vector<MetricsRow> trace;
    BufferSet buffers;
    std::size_t refills = 0;
    std::size_t generation_failures = 0;
};

namespace detail {

inline Matrix states_of(const std::vector<Transition>& items) {
    Matrix m = Matrix::matrix(items.size(), kStateDim);
    for (std::size_t i = 0; i < items.size(); ++i) std::copy_n(items[i].s.data(), kStateDim, m.data() + i * kStateDim);
    return m;
}

inline std::vector<Transition> positive_items(const PositiveBuffer<Transition>& p) { return {p.begin(), p.end()}; }

}  // namespace detail

/// Source-buffer refill; returns the divergence of the refill against the
/// positive buffer (the on-policy reference) when one is produced.
inline std::optional<DivergenceReport> refill_source(DataSource source, BufferSet& buf, const TabularQ& q, const MazeSpec& spec,
                                                     const AgentConfig& cfg, const SourceConfig& src, std::uint64_t seed) {
    const CellPolicy policy = greedy_policy(q);
    const auto recent = detail::positive_items(buf.positive);
    const Matrix reference = detail::states_of(recent);
    Dataset measured;
    if (source == DataSource::edis) {
        EdisModel m = train_edis(buf.offline, buf.online, recent, policy, spec, src.edis, seed);
        SamplerConfig sc = src.edis.sampler;
        sc.seed = derive_seed(seed, "edis-sample");
        const Matrix raw = generate_tuples(m, cfg.refill, src.edis.sched, sc, &src.edis.guidance);
        measured = decode_tuples(raw, spec, false);
        buf.synthetic = decode_tuples(raw, spec, true);
    } else {
        const ModelKind kind = source == DataSource::mlp_model ? ModelKind::mlp : ModelKind::diffusion;
        TransitionModelConfig mc = src.model;
        mc.param_budget = src.param_budget;
        const Dataset data = concat(buf.offline, buf.online);
        auto tm = train_transition_model(kind, data, mc, derive_seed(seed, "model"));
        measured = rollout_augment(tm.model, policy, detail::states_of(buf.online.items), src.horizon, cfg.refill, spec,
                                   derive_seed(seed, "rollout"));
        buf.synthetic = Dataset{};
        for (const auto& t : measured.items)
            if (spec.in_grid(nearest_cell(t.s_next.data()))) buf.synthetic.add(t);
    }
    if (measured.empty()) return std::nullopt;
    return divergence_report(source_name(source), measured, reference, policy, spec);
}

/// Online fine-tuning: epsilon-greedy interaction, periodic source refills and
/// fitted-Q updates (alpha = 0) on batches mixing online and source data.
inline FinetuneResult finetune_online(const MazeSpec& spec, const TabularQ& q0, const Dataset& offline, const AgentConfig& cfg,
                                      DataSource source, const SourceConfig& src = {}) {
    cfg.validate();
    FinetuneResult out{q0, {}, {}, 0, 0};
    BufferSet& buf = out.buffers;
    buf.offline = offline;
    buf.positive = PositiveBuffer<Transition>(cfg.positive_capacity);
    if (source == DataSource::offline_replay) buf.synthetic = offline;
    if (source != DataSource::none && source != DataSource::offline_replay && offline.empty())
        throw ValidationError("finetune_online: the " + std::string(source_name(source)) + " source needs offline data");

    Rng env_rng(cfg.seed, "env"), explore(cfg.seed, "explore"), batch_rng(cfg.seed, "batch");
    MazeEnv env(spec, env_rng);
    const QUpdateOptions opt = update_options(spec, 0.0);
    const std::uint64_t eval_seed = derive_seed(cfg.seed, "eval");
    std::size_t consecutive_failures = 0;
    std::optional<DivergenceReport> pending;

    for (std::size_t step = 1; step <= cfg.env_steps; ++step) {
        const auto qs = out.q.values(env.state().data());
        const Action a = explore.bernoulli(cfg.epsilon) ? static_cast<Action>(explore.index(kNumActions)) : greedy(qs);
        Transition tr;
        const bool ended = env.step(a, tr);
        buf.online.add(tr);
        buf.positive.push(tr);
        if (ended) env.reset();

        const bool generative = source != DataSource::none && source != DataSource::offline_replay;
        if (generative && step % cfg.retrain_interval == 0 && !buf.positive.empty()) {
            try {
                pending = refill_source(source, buf, out.q, spec, cfg, src, derive_seed(cfg.seed, "refill", out.refills));
                ++out.refills;
                consecutive_failures = 0;
            } catch (const NumericError& e) {
                ++out.generation_failures;
                std::cerr << "refill at step " << step << " failed: " << e.what() << '\n';
                if (++consecutive_failures >= 3) throw NumericError("finetune_online: generation failed three times in a row");
            }
        }

        const std::vector<Transition>& real = buf.online.items;
        const std::size_t n_real = real.size() + (cfg.include_offline ? buf.offline.size() : 0);
        for (std::size_t g = 0; g < cfg.grad_steps; ++g) {
            Batch batch;
            batch.reserve(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                if (!buf.synthetic.empty() && batch_rng.bernoulli(cfg.synthetic_ratio)) {
                    batch.push_back(&buf.synthetic.items[batch_rng.index(buf.synthetic.size())]);
                } else {
                    const std::size_t k = batch_rng.index(n_real);
                    batch.push_back(k < real.size() ? &real[k] : &buf.offline.items[k - real.size()]);
                }
            }
            q_update(out.q, batch, opt);
        }

        if (step % cfg.eval_interval == 0 || step == cfg.env_steps || pending) {
            MetricsRow row{step, evaluate_policy(spec, out.q, cfg.eval_episodes, eval_seed), pending};
            out.trace.push_back(std::move(row));
            pending.reset();
        }
    }
    return out;
}

}  // namespace edis
