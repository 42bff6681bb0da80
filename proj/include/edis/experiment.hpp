#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agent.hpp"

namespace edis {

/// Everything an end-to-end maze run needs.
struct ExperimentConfig {
    MazeSpec spec;
    BehaviorPolicy behavior;
    std::size_t offline_n = 2000;
    AgentConfig agent;
    SourceConfig sources;
    std::size_t warmup_steps = 1000;  ///< online steps (source none) before divergence measurements
    std::size_t sample_n = 2000;      ///< tuples per source in divergence measurements
};

/// Parameters of the EDIS stack the configuration would build.
inline std::size_t edis_parameter_count(const GeneratorConfig& g, const TupleLayout& l = maze_layout()) {
    std::size_t n = mlp_parameter_count(mlp_widths(l.dim() + kSigmaFeatures, g.denoiser.net.hidden, g.denoiser.net.depth, l.dim()));
    for (EnergyRole r : kRoles)
        if (role_active(l, r))
            n += mlp_parameter_count(mlp_widths(input_width(l, r) + kSigmaFeatures, g.energy.hidden, g.energy.depth, 1));
    return n;
}

inline SourceConfig with_parity(SourceConfig s) {
    if (s.param_budget == 0) s.param_budget = edis_parameter_count(s.edis);
    return s;
}

/// Offline data, pretrained Q and a short online warmup: the state of the
/// agent at which generated data is compared against real interaction.
struct Stage {
    Dataset offline;
    TabularQ q0;
    TabularQ q;
    BufferSet buffers;
};

inline Stage prepare_stage(const ExperimentConfig& cfg, std::uint64_t seed) {
    Stage st;
    st.offline = generate_offline_dataset(cfg.spec, cfg.behavior, cfg.offline_n, derive_seed(seed, "offline"));
    AgentConfig ac = cfg.agent;
    ac.seed = derive_seed(seed, "agent");
    st.q0 = pretrain_offline(st.offline, cfg.spec, ac).q;
    ac.env_steps = cfg.warmup_steps;
    FinetuneResult warm = finetune_online(cfg.spec, st.q0, st.offline, ac, DataSource::none);
    st.q = std::move(warm.q);
    st.buffers = std::move(warm.buffers);
    return st;
}

/// Real epsilon-greedy interaction under Q for n steps.
inline Dataset interact(const MazeSpec& spec, const TabularQ& q, double epsilon, std::size_t n, std::uint64_t seed) {
    Rng env_rng(seed, "env"), explore(seed, "explore");
    MazeEnv env(spec, env_rng);
    Dataset out;
    for (std::size_t i = 0; i < n; ++i) {
        const Action a = explore.bernoulli(epsilon) ? static_cast<Action>(explore.index(kNumActions))
                                                    : greedy(q.values(env.state().data()));
        Transition tr;
        const bool ended = env.step(a, tr);
        out.add(std::move(tr));
        if (ended) env.reset();
    }
    return out;
}

inline Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed) {
    detail::require(!d.empty(), "subsample: empty dataset");
    Rng rng(seed, "subsample");
    Dataset out;
    for (std::size_t i = 0; i < n; ++i) out.add(d.items[rng.index(d.size())]);
    return out;
}

inline const std::vector<std::string>& table_sources() {
    static const std::vector<std::string> s{"interaction", "offline", "mlp_transition", "diffusion_transition", "edis"};
    return s;
}

inline void check_source(const std::string& s) {
    const auto& all = table_sources();
    if (std::find(all.begin(), all.end(), s) == all.end())
        throw ValidationError("unknown divergence source '" + s +
                              "' (expected interaction, offline, mlp_transition, diffusion_transition or edis)");
}

/// Tuples a source produces at the stage; state JS is taken against `reference`.
inline Dataset source_tuples(const std::string& source, const Stage& st, const ExperimentConfig& cfg, std::uint64_t seed,
                             const EdisModel* edis = nullptr) {
    const CellPolicy policy = greedy_policy(st.q);
    if (source == "interaction") return interact(cfg.spec, st.q, cfg.agent.epsilon, cfg.sample_n, derive_seed(seed, "interaction"));
    if (source == "offline") return subsample(st.offline, cfg.sample_n, derive_seed(seed, "offline-sample"));
    if (source == "mlp_transition" || source == "diffusion_transition") {
        const ModelKind kind = source == "mlp_transition" ? ModelKind::mlp : ModelKind::diffusion;
        const SourceConfig sc = with_parity(cfg.sources);
        TransitionModelConfig mc = sc.model;
        mc.param_budget = sc.param_budget;
        auto tm = train_transition_model(kind, concat(st.offline, st.buffers.online), mc, derive_seed(seed, source));
        return rollout_augment(tm.model, policy, st.buffers.online.states(), sc.horizon, cfg.sample_n, cfg.spec,
                               derive_seed(seed, source + "-rollout"));
    }
    if (source == "edis") {
        std::optional<EdisModel> own;
        if (!edis) {
            own = train_edis(st.offline, st.buffers.online, {st.buffers.positive.begin(), st.buffers.positive.end()}, policy,
                             cfg.spec, cfg.sources.edis, derive_seed(seed, "edis"));
            edis = &*own;
        }
        SamplerConfig sc = cfg.sources.edis.sampler;
        sc.seed = derive_seed(seed, "edis-sample");
        return decode_tuples(generate_tuples(*edis, cfg.sample_n, cfg.sources.edis.sched, sc, &cfg.sources.edis.guidance),
                             cfg.spec, false);
    }
    check_source(source);
    return {};
}

/// The real on-policy state sample every source is compared against.
inline Matrix reference_states(const Stage& st, const ExperimentConfig& cfg, std::uint64_t seed) {
    return interact(cfg.spec, st.q, cfg.agent.epsilon, cfg.sample_n, derive_seed(seed, "reference")).states();
}

enum class EnergyDrop { none, state, action, transition };

inline EnergyDrop parse_drop(const std::string& s) {
    if (s == "none") return EnergyDrop::none;
    if (s == "state") return EnergyDrop::state;
    if (s == "action") return EnergyDrop::action;
    if (s == "transition") return EnergyDrop::transition;
    throw ValidationError("unknown energy term '" + s + "' (expected state, action, transition or none)");
}

inline const char* drop_name(EnergyDrop d) {
    switch (d) {
        case EnergyDrop::none: return "none";
        case EnergyDrop::state: return "state";
        case EnergyDrop::action: return "action";
        case EnergyDrop::transition: return "transition";
    }
    return "?";
}

/// EDIS generation with one energy gradient zeroed, reported against the reference.
inline DivergenceReport ablation_report(const EdisModel& m, EnergyDrop drop, const Stage& st, const Matrix& reference,
                                        const ExperimentConfig& cfg, std::uint64_t seed) {
    GuidanceOptions g = cfg.sources.edis.guidance;
    if (drop != EnergyDrop::none) g.use[static_cast<int>(drop) - 1] = false;
    SamplerConfig sc = cfg.sources.edis.sampler;
    sc.seed = derive_seed(seed, "edis-sample");
    const Dataset tuples = decode_tuples(generate_tuples(m, cfg.sample_n, cfg.sources.edis.sched, sc, &g), cfg.spec, false);
    if (tuples.empty()) throw NumericError("ablation: no generated tuple decodes to a valid state");
    DivergenceReport r = divergence_report(std::string("edis-drop-") + drop_name(drop), tuples, reference, greedy_policy(st.q), cfg.spec);
    return r;
}

struct SourceOutcome {
    std::string source;
    std::optional<DivergenceReport> report;
    std::string error;  ///< why the source produced nothing (report empty)
};

struct SeedReports {
    std::vector<SourceOutcome> sources;
    std::vector<std::pair<EnergyDrop, DivergenceReport>> ablations;
};

/// One seed of the divergence experiments. Sources and ablations share the
/// stage, the reference sample and (when both need it) one trained EDIS stack.
/// A source that fails is recorded with its error; the others still run.
inline SeedReports seed_reports(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<std::string>& sources,
                                const std::vector<EnergyDrop>& drops) {
    for (const auto& s : sources) check_source(s);
    const Stage st = prepare_stage(cfg, seed);
    const Matrix reference = reference_states(st, cfg, seed);
    const CellPolicy policy = greedy_policy(st.q);
    const bool need_edis = !drops.empty() || std::find(sources.begin(), sources.end(), "edis") != sources.end();
    std::optional<EdisModel> edis;
    std::string edis_error;
    if (need_edis) {
        try {
            edis = train_edis(st.offline, st.buffers.online, {st.buffers.positive.begin(), st.buffers.positive.end()}, policy,
                              cfg.spec, cfg.sources.edis, derive_seed(seed, "edis"));
        } catch (const NumericError& e) {
            edis_error = e.what();
        }
    }
    SeedReports out;
    for (const auto& s : sources) {
        SourceOutcome o{s, std::nullopt, {}};
        try {
            if (s == "edis" && !edis) throw NumericError(edis_error);
            const Dataset d = source_tuples(s, st, cfg, seed, edis ? &*edis : nullptr);
            if (d.empty()) throw NumericError("no tuple decodes to a valid state");
            o.report = divergence_report(s, d, reference, policy, cfg.spec);
        } catch (const NumericError& e) {
            o.error = e.what();
        }
        out.sources.push_back(std::move(o));
    }
    if (!drops.empty() && !edis) throw NumericError("ablation: EDIS training failed: " + edis_error);
    for (EnergyDrop d : drops) out.ablations.emplace_back(d, ablation_report(*edis, d, st, reference, cfg, seed));
    return out;
}

}  // namespace edis
