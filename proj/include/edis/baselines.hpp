#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "divergence.hpp"
#include "sampler.hpp"

namespace edis {

inline std::size_t mlp_parameter_count(const std::vector<std::size_t>& widths) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += (widths[l] + 1) * widths[l + 1];
    return n;
}

inline std::vector<std::size_t> mlp_widths(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out) {
    std::vector<std::size_t> w{in};
    for (std::size_t i = 0; i < depth; ++i) w.push_back(hidden);
    w.push_back(out);
    return w;
}

/// Hidden width whose parameter count is closest to `budget`.
inline std::size_t width_for_budget(std::size_t in, std::size_t out, std::size_t depth, std::size_t budget) {
    detail::require(budget > 0 && depth >= 1, "width_for_budget: budget and depth must be positive");
    std::size_t best = 1;
    double best_gap = INFINITY;
    for (std::size_t w = 1; w <= 8192; ++w) {
        const double n = static_cast<double>(mlp_parameter_count(mlp_widths(in, w, depth, out)));
        const double gap = std::abs(n - static_cast<double>(budget));
        if (gap < best_gap) best = w, best_gap = gap;
        if (n > 2.0 * static_cast<double>(budget)) break;
    }
    return best;
}

inline void check_capacity(const std::string& what, std::size_t params, std::size_t budget) {
    if (budget == 0) return;
    const double rel = std::abs(static_cast<double>(params) - static_cast<double>(budget)) / static_cast<double>(budget);
    if (rel > 0.10)
        throw ValidationError(what + ": " + std::to_string(params) + " parameters is more than 10% away from the budget of " +
                              std::to_string(budget));
}

enum class ModelKind { mlp, diffusion };

inline const char* kind_name(ModelKind k) { return k == ModelKind::mlp ? "mlp" : "diffusion"; }

struct TransitionModelConfig {
    std::size_t depth = 4;
    std::size_t hidden = 128;       ///< used when param_budget is 0
    std::size_t param_budget = 0;   ///< match this many parameters (within 10%)
    std::size_t iterations = 4000;
    std::size_t batch_size = 256;
    double lr = 1e-3;               ///< mlp kind; the diffusion kind uses `denoiser.lr`
    DenoiserTrainConfig denoiser;   ///< diffusion kind (net width is overridden by the budget)
    NoiseSchedule sched;
};

/// s' given (s, a): direct regression (mlp) or an inpainted tuple denoiser (diffusion).
class TransitionModel {
public:
    TransitionModel() = default;

    TransitionModel(ModelKind kind, std::size_t dim_s, std::size_t dim_a, const TransitionModelConfig& cfg)
        : kind_(kind), ds_(dim_s), da_(dim_a), sched_(cfg.sched) {
        const std::size_t tuple = 2 * dim_s + dim_a;
        if (kind == ModelKind::mlp) {
            const std::size_t w = cfg.param_budget ? width_for_budget(ds_ + da_, ds_, cfg.depth, cfg.param_budget) : cfg.hidden;
            mlp_ = Mlp<float>(mlp_widths(ds_ + da_, w, cfg.depth, ds_), true);
        } else {
            const std::size_t depth = cfg.denoiser.net.depth;
            const std::size_t w = cfg.param_budget ? width_for_budget(tuple + kSigmaFeatures, tuple, depth, cfg.param_budget)
                                                   : cfg.denoiser.net.hidden;
            denoiser_ = Denoiser(tuple, DenoiserConfig{w, depth, cfg.denoiser.net.residual});
        }
        check_capacity(std::string(kind_name(kind)) + " transition model", parameter_count(), cfg.param_budget);
    }

    ModelKind kind() const noexcept { return kind_; }
    std::size_t dim_s() const noexcept { return ds_; }
    std::size_t dim_a() const noexcept { return da_; }
    std::size_t parameter_count() const {
        return kind_ == ModelKind::mlp ? mlp_.parameter_count() : denoiser_.net().parameter_count();
    }

    Standardizer& stats() noexcept { return stats_; }
    const Standardizer& stats() const noexcept { return stats_; }
    Mlp<float>& mlp() noexcept { return mlp_; }
    const Mlp<float>& mlp() const noexcept { return mlp_; }
    Denoiser& denoiser() noexcept { return denoiser_; }
    const Denoiser& denoiser() const noexcept { return denoiser_; }
    const NoiseSchedule& schedule() const noexcept { return sched_; }

    /// Next states (raw units) for rows of raw states and actions.
    Matrix predict(const Matrix& s, const Matrix& a, std::uint64_t seed) const {
        if (s.rows() != a.rows() || s.cols() != ds_ || a.cols() != da_)
            throw ValidationError("transition model: inputs " + shape_str(s.shape()) + " and " + shape_str(a.shape()) +
                                  " do not match dim_s=" + std::to_string(ds_) + " dim_a=" + std::to_string(da_));
        const std::size_t n = s.rows(), tuple = 2 * ds_ + da_;
        Matrix raw = Matrix::matrix(n, tuple);
        for (std::size_t r = 0; r < n; ++r) {
            std::copy_n(s.data() + r * ds_, ds_, raw.data() + r * tuple);
            std::copy_n(a.data() + r * da_, da_, raw.data() + r * tuple + ds_);
            // s' columns hold the mean so the standardized placeholder is 0
            std::copy_n(stats_.mean.data() + ds_ + da_, ds_, raw.data() + r * tuple + ds_ + da_);
        }
        Matrix z = stats_.apply(raw);
        Matrix z_next;
        if (kind_ == ModelKind::mlp) {
            z_next = mlp_forward(mlp_, slice_cols(z, 0, ds_ + da_));
        } else {
            auto mask = ConditionMask::on_range(tuple, 0, ds_ + da_, z);
            SamplerConfig cfg;
            cfg.seed = seed;
            z_next = slice_cols(reverse_sde_sample(denoiser_, nullptr, sched_, cfg, n, &mask), ds_ + da_, tuple);
        }
        Matrix out = Matrix::matrix(n, ds_);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < ds_; ++c)
                out(r, c) = z_next(r, c) * stats_.std[ds_ + da_ + c] + stats_.mean[ds_ + da_ + c];
        return out;
    }

private:
    ModelKind kind_ = ModelKind::mlp;
    std::size_t ds_ = 0;
    std::size_t da_ = 0;
    NoiseSchedule sched_;
    Standardizer stats_;
    Mlp<float> mlp_;
    Denoiser denoiser_;
};

struct TrainedTransitionModel {
    TransitionModel model;
    std::vector<double> loss_trace;
};

inline TrainedTransitionModel train_transition_model(ModelKind kind, const Dataset& data, const TransitionModelConfig& cfg,
                                                     std::uint64_t seed) {
    detail::require(!data.empty(), "train_transition_model: empty dataset");
    for (const auto& t : data.items)
        if (t.s.size() != data.dim_s || t.a.size() != data.dim_a || t.s_next.size() != data.dim_s)
            throw ValidationError("train_transition_model: transition widths do not match the dataset");
    TrainedTransitionModel out{TransitionModel(kind, data.dim_s, data.dim_a, cfg), {}};
    TransitionModel& m = out.model;
    const Matrix tuples = data.tuples();
    m.stats() = Standardizer::fit(tuples);
    const Matrix z = m.stats().apply(tuples);
    if (kind == ModelKind::diffusion) {
        DenoiserTrainConfig dc = cfg.denoiser;
        dc.seed = derive_seed(seed, "transition-diffusion");
        // the net was sized by the budget, so train it in place rather than rebuilding from dc.net
        Rng rng(dc.seed, "init");
        m.denoiser().init(rng);
        TrainedDenoiser td = train_denoiser(z, cfg.sched, dc, &m.denoiser());
        m.denoiser() = std::move(td.denoiser);
        out.loss_trace = std::move(td.loss_trace);
        return out;
    }
    Rng rng(seed, "transition-mlp");
    m.mlp().init(rng);
    const std::size_t ds = data.dim_s, da = data.dim_a, in = ds + da;
    const Matrix x = slice_cols(z, 0, in), y = slice_cols(z, in, in + ds);
    auto params = m.mlp().parameters();
    AdamState<float> adam(params, cfg.lr);
    const std::size_t b = std::min(cfg.batch_size, data.size());
    Matrix xb = Matrix::matrix(b, in), yb = Matrix::matrix(b, ds);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        adam.lr = cosine_lr(cfg.lr, it, cfg.iterations, 0.05);
        for (std::size_t r = 0; r < b; ++r) {
            const std::size_t i = rng.index(data.size());
            std::copy_n(x.data() + i * in, in, xb.data() + r * in);
            std::copy_n(y.data() + i * ds, ds, yb.data() + r * ds);
        }
        auto tr = mlp_trace(m.mlp(), xb);
        Matrix up = Matrix::matrix(b, ds);
        double loss = 0.0;
        for (std::size_t i = 0; i < up.size(); ++i) {
            const double e = tr.output[i] - yb[i];
            loss += e * e / static_cast<double>(b);
            up[i] = static_cast<float>(2.0 * e / static_cast<double>(b));
        }
        if (!std::isfinite(loss)) throw NumericError("train_transition_model: non-finite loss at iteration " + std::to_string(it));
        adam_step(params, mlp_backward(m.mlp(), tr, up).params, adam);
        out.loss_trace.push_back(loss);
    }
    return out;
}

template <class M>
concept TransitionPredictor = requires(const M& m, const Matrix& s, const Matrix& a, std::uint64_t seed) {
    { m.predict(s, a, seed) } -> std::convertible_to<Matrix>;
};

struct RolloutStats {
    std::size_t branches = 0;
    std::size_t truncated_non_finite = 0;
    std::size_t truncated_invalid = 0;
};

/// Branched rollouts of `policy` inside a model: each branch starts at a
/// random initial state and runs up to H steps; rounds of branches repeat
/// until n tuples are collected. Rewards and done flags come from the spec.
template <TransitionPredictor M>
Dataset rollout_augment(const M& model, const CellPolicy& policy, const Matrix& init_states, std::size_t horizon, std::size_t n,
                        const MazeSpec& spec, std::uint64_t seed, RolloutStats* stats = nullptr) {
    detail::require(horizon >= 1, "rollout_augment: horizon must be at least 1");
    Dataset out;
    if (n == 0) return out;
    detail::require(init_states.rows() > 0 && init_states.cols() == kStateDim, "rollout_augment: no initial states");
    Rng rng(seed, "rollout-starts");
    RolloutStats local;
    RolloutStats& st = stats ? *stats : local;
    const std::size_t per_round = (n + horizon - 1) / horizon;
    for (std::size_t round = 0; out.size() < n; ++round) {
        if (round >= 100) break;  // every branch keeps failing; return what we have
        std::vector<std::vector<float>> active;
        for (std::size_t b = 0; b < per_round; ++b) {
            const float* s = init_states.data() + rng.index(init_states.rows()) * kStateDim;
            active.emplace_back(s, s + kStateDim);
        }
        st.branches += active.size();
        for (std::size_t h = 0; h < horizon && !active.empty() && out.size() < n; ++h) {
            std::vector<Cell> cells;
            std::vector<std::vector<float>> live;
            for (auto& s : active) {
                const Cell c = nearest_cell(s.data());
                if (!spec.is_open(c)) {
                    ++st.truncated_invalid;
                    continue;
                }
                cells.push_back(c);
                live.push_back(std::move(s));
            }
            if (live.empty()) break;
            Matrix sm = Matrix::matrix(live.size(), kStateDim), am = Matrix::matrix(live.size(), kNumActions);
            std::vector<Action> acts(live.size());
            for (std::size_t i = 0; i < live.size(); ++i) {
                acts[i] = policy(cells[i]);
                std::copy(live[i].begin(), live[i].end(), sm.data() + i * kStateDim);
                am(i, static_cast<std::size_t>(acts[i])) = 1.f;
            }
            const Matrix next = model.predict(sm, am, derive_seed(seed, "rollout-step", round * horizon + h));
            active.clear();
            for (std::size_t i = 0; i < live.size() && out.size() < n; ++i) {
                const float* sn = next.data() + i * kStateDim;
                if (!std::isfinite(sn[0]) || !std::isfinite(sn[1])) {
                    ++st.truncated_non_finite;
                    continue;
                }
                Transition t;
                t.s = live[i];
                t.a = one_hot(acts[i]);
                t.r = static_cast<float>(spec.reward(cells[i], acts[i]));
                t.s_next.assign(sn, sn + kStateDim);
                t.done = nearest_cell(sn) == spec.exit;
                t.origin = Provenance::generated;
                if (!t.done) active.push_back(t.s_next);
                out.add(std::move(t));
            }
        }
    }
    return out;
}

}  // namespace edis
