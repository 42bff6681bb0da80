#pragma once

#include <string>
#include <vector>

#include "divergence.hpp"
#include "energy.hpp"

namespace edis {

struct GeneratorConfig {
    NoiseSchedule sched;
    DenoiserTrainConfig denoiser;
    EnergyTrainConfig energy;
    SamplerConfig sampler;
    GuidanceOptions guidance;
};

/// Denoiser and energies over standardized (s, a, s') tuples.
struct EdisModel {
    TupleLayout layout;
    Standardizer stats;
    Denoiser denoiser;
    EnergySet energies;

    std::size_t parameter_count() const {
        std::size_t n = denoiser.net().parameter_count();
        for (EnergyRole r : kRoles)
            if (const EnergyNet* e = energies.get(r)) n += e->net().parameter_count();
        return n;
    }

    void save(Checkpoint& ck) const {
        stats.save(ck, "stats");
        denoiser.save(ck);
        energies.save(ck);
    }

    static EdisModel load(const Checkpoint& ck) {
        EdisModel m;
        m.stats = Standardizer::load(ck, "stats");
        m.denoiser = Denoiser::load(ck);
        m.energies = EnergySet::load(ck);
        m.layout = m.energies.layout;
        return m;
    }
};

inline TupleLayout maze_layout() { return {kStateDim, kNumActions, kStateDim}; }

inline Matrix transitions_matrix(const std::vector<Transition>& items, std::size_t dim_s, std::size_t dim_a) {
    Dataset d;
    d.dim_s = dim_s;
    d.dim_a = dim_a;
    d.items = items;
    return d.tuples();
}

/// Greedy cell policy as a map on standardized states returning standardized one-hots.
inline PolicyFn standardized_policy(const CellPolicy& policy, const Standardizer& stats, const MazeSpec& spec) {
    return [policy, stats, &spec](const Matrix& zs) {
        Matrix a = Matrix::matrix(zs.rows(), kNumActions);
        for (std::size_t r = 0; r < zs.rows(); ++r) {
            float s[kStateDim];
            for (std::size_t c = 0; c < kStateDim; ++c) s[c] = zs(r, c) * stats.std[c] + stats.mean[c];
            Cell cell = nearest_cell(s);
            cell.row = std::clamp(cell.row, 0, spec.height - 1);
            cell.col = std::clamp(cell.col, 0, spec.width - 1);
            const auto oh = one_hot(policy(cell));
            for (std::size_t c = 0; c < kNumActions; ++c)
                a(r, c) = (oh[c] - stats.mean[kStateDim + c]) / stats.std[kStateDim + c];
        }
        return a;
    };
}

/// Denoiser on offline + online tuples (offline statistics), then the three
/// energies against it. `warm` continues training a previous denoiser.
inline EdisModel train_edis(const Dataset& offline, const Dataset& online, const std::vector<Transition>& recent,
                            const CellPolicy& policy, const MazeSpec& spec, const GeneratorConfig& cfg, std::uint64_t seed,
                            const Denoiser* warm = nullptr) {
    detail::require(!offline.empty(), "train_edis: offline dataset is empty");
    if (recent.empty()) throw ValidationError("train_edis: no on-policy data yet (positive buffer is empty)");
    EdisModel m;
    m.layout = maze_layout();
    m.stats = offline.stats();
    const Matrix z_off = m.stats.apply(offline.tuples());
    const Matrix z_on = online.empty() ? Matrix::matrix(0, m.layout.dim()) : m.stats.apply(online.tuples());
    Matrix all = z_on.rows() ? vconcat(std::vector<Matrix>{z_off, z_on}) : z_off;

    DenoiserTrainConfig dc = cfg.denoiser;
    dc.seed = derive_seed(seed, "edis-denoiser");
    m.denoiser = train_denoiser(all, cfg.sched, dc, warm).denoiser;

    EnergyData data;
    data.recent = m.stats.apply(transitions_matrix(recent, kStateDim, kNumActions));
    data.online = z_on;
    data.offline = z_off;
    data.policy = standardized_policy(policy, m.stats, spec);
    EnergyTrainConfig ec = cfg.energy;
    ec.seed = derive_seed(seed, "edis-energy");
    m.energies = train_energies(m.denoiser, m.layout, data, ec, cfg.sched).energies;
    return m;
}

/// n raw tuples from the (optionally guided) reverse process.
inline Matrix generate_tuples(const EdisModel& m, std::size_t n, const NoiseSchedule& sched, const SamplerConfig& sampler,
                              const GuidanceOptions* guidance) {
    GuidanceFn g;
    if (guidance) g = make_guidance(m.energies, *guidance);
    Matrix z = reverse_sde_sample(m.denoiser, guidance ? &g : nullptr, sched, sampler, n);
    return m.stats.invert(z);
}

struct DecodeStats {
    std::size_t invalid_state = 0;
    std::size_t invalid_next = 0;
};

/// Snap generated tuples into transitions: arg-max action, reward from the
/// spec, done iff s' decodes to the exit. Rows whose s is not an open cell are
/// dropped; with `require_next`, rows whose s' is off the grid are dropped too.
inline Dataset decode_tuples(const Matrix& raw, const MazeSpec& spec, bool require_next, DecodeStats* stats = nullptr) {
    const TupleLayout l = maze_layout();
    detail::require(raw.cols() == l.dim(), "decode_tuples: tuple width mismatch");
    DecodeStats local;
    DecodeStats& st = stats ? *stats : local;
    Dataset out;
    for (std::size_t r = 0; r < raw.rows(); ++r) {
        const float* row = raw.data() + r * l.dim();
        bool finite = true;
        for (std::size_t c = 0; c < l.dim(); ++c) finite = finite && std::isfinite(row[c]);
        const Cell c = nearest_cell(row);
        if (!finite || !spec.is_open(c)) {
            ++st.invalid_state;
            continue;
        }
        const float* sn = row + l.state + l.action;
        if (require_next && !spec.in_grid(nearest_cell(sn))) {
            ++st.invalid_next;
            continue;
        }
        Transition t;
        t.s.assign(row, row + l.state);
        const Action a = decode_action(row + l.state);
        t.a = one_hot(a);
        t.r = static_cast<float>(spec.reward(c, a));
        t.s_next.assign(sn, sn + l.next_state);
        t.done = nearest_cell(sn) == spec.exit;
        t.origin = Provenance::generated;
        out.add(std::move(t));
    }
    return out;
}

}  // namespace edis
