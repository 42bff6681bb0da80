#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sampler.hpp"

namespace edis {

/// Column layout of a (s, a, s') tuple vector.
struct TupleLayout {
    std::size_t state = 0;
    std::size_t action = 0;
    std::size_t next_state = 0;

    std::size_t dim() const { return state + action + next_state; }
};

enum class EnergyRole { state = 0, action = 1, next_state = 2 };

inline const char* role_name(EnergyRole r) {
    switch (r) {
        case EnergyRole::state: return "state";
        case EnergyRole::action: return "action";
        case EnergyRole::next_state: return "next_state";
    }
    return "?";
}

inline constexpr std::array<EnergyRole, 3> kRoles{EnergyRole::state, EnergyRole::action, EnergyRole::next_state};

/// [begin, end) of the free argument of a role; everything before it conditions.
inline std::pair<std::size_t, std::size_t> free_slice(const TupleLayout& l, EnergyRole r) {
    switch (r) {
        case EnergyRole::state: return {0, l.state};
        case EnergyRole::action: return {l.state, l.state + l.action};
        case EnergyRole::next_state: return {l.state + l.action, l.dim()};
    }
    return {0, 0};
}

/// Energies read a prefix of the tuple: (s), (s, a) or (s, a, s').
inline std::size_t input_width(const TupleLayout& l, EnergyRole r) { return free_slice(l, r).second; }

inline bool role_active(const TupleLayout& l, EnergyRole r) {
    auto [b, e] = free_slice(l, r);
    return e > b;
}

/// Sigma-conditioned scalar energy over a tuple prefix,
///
///   E(x; sigma) = c(sigma) F(c(sigma) x, features(sigma)),  c = 1/sqrt(sigma^2 + 1),
///
/// so one network represents the whole family of time-t energies.
class EnergyNet {
public:
    EnergyNet() = default;

    EnergyNet(EnergyRole role, std::size_t input_dim, std::size_t hidden, std::size_t depth) : role_(role), dim_(input_dim) {
        detail::require(input_dim > 0, "energy net: empty input slice");
        std::vector<std::size_t> widths{input_dim + kSigmaFeatures};
        for (std::size_t i = 0; i < depth; ++i) widths.push_back(hidden);
        widths.push_back(1);
        net_ = Mlp<float>(widths, true);
    }

    EnergyNet(EnergyRole role, Mlp<float> net) : role_(role), dim_(net.input_width() - kSigmaFeatures), net_(std::move(net)) {
        detail::require(net_.output_width() == 1, "energy net: output must be scalar");
    }

    static double scale(double sigma) { return 1.0 / std::sqrt(sigma * sigma + 1.0); }

    void init(Rng& rng) { net_.init(rng); }

    EnergyRole role() const noexcept { return role_; }
    std::size_t input_dim() const noexcept { return dim_; }
    Mlp<float>& net() noexcept { return net_; }
    const Mlp<float>& net() const noexcept { return net_; }

    /// Energies of the first input_dim() columns of x; one value per row.
    std::vector<float> energy(const Matrix& x, double sigma) const {
        Matrix f = mlp_forward(net_, features(x, sigma));
        const float c = static_cast<float>(scale(sigma));
        std::vector<float> e(f.rows());
        for (std::size_t r = 0; r < e.size(); ++r) e[r] = c * f[r];
        return e;
    }

    MlpTrace<float> trace(const Matrix& x, double sigma) const { return mlp_trace(net_, features(x, sigma)); }

    /// Parameter gradients of sum_r upstream[r] * E(x_r).
    std::vector<Matrix> param_grads(const MlpTrace<float>& tr, const std::vector<float>& upstream, double sigma) const {
        Matrix up = Matrix::matrix(upstream.size(), 1);
        const float c = static_cast<float>(scale(sigma));
        for (std::size_t r = 0; r < upstream.size(); ++r) up[r] = c * upstream[r];
        return mlp_backward(net_, tr, up, true).params;
    }

    /// dE/dx for each row, over the first input_dim() columns.
    Matrix input_grad(const Matrix& x, double sigma) const {
        auto tr = trace(x, sigma);
        const double c = scale(sigma);
        // c from the output scale and c from the input scale
        Matrix up = Matrix::matrix(x.rows(), 1, static_cast<float>(c * c));
        Matrix g = mlp_backward(net_, tr, up, false).input;
        return slice_cols(g, 0, dim_);
    }

    void save(Checkpoint& ck, const std::string& prefix) const {
        ck.put_mlp(prefix, net_);
        ck.put_scalar(prefix + ".role", static_cast<double>(role_));
    }

    static EnergyNet load(const Checkpoint& ck, const std::string& prefix) {
        return EnergyNet(static_cast<EnergyRole>(static_cast<int>(ck.scalar(prefix + ".role"))), ck.get_mlp(prefix));
    }

private:
    Matrix features(const Matrix& x, double sigma) const {
        if (x.cols() < dim_)
            throw ValidationError(std::string("energy net (") + role_name(role_) + "): input has " +
                                  std::to_string(x.cols()) + " columns, needs " + std::to_string(dim_));
        Matrix prefix = x.cols() == dim_ ? x : slice_cols(x, 0, dim_);
        return with_sigma_features(prefix, sigma, scale(sigma));
    }

    EnergyRole role_ = EnergyRole::state;
    std::size_t dim_ = 0;
    Mlp<float> net_;
};

struct InfoNceResult {
    double loss = 0.0;
    std::vector<double> d_pos;  ///< dLoss / dE(pos_i)
    Tensor<double> d_neg;       ///< dLoss / dE(neg_ij), [pos x K_neg]
};

/// -sum_i log( e^{-E(pos_i)} / (e^{-E(pos_i)} + sum_j e^{-E(neg_ij)}) ), log-sum-exp stabilized.
inline InfoNceResult infonce_loss(const std::vector<double>& pos, const Tensor<double>& neg) {
    detail::require(!pos.empty(), "infonce_loss: need at least one positive");
    detail::require(neg.rank() == 2 && neg.rows() == pos.size() && neg.cols() >= 1,
                    "infonce_loss: negatives must be [positives x K_neg], got " + shape_str(neg.shape()));
    for (std::size_t i = 0; i < pos.size(); ++i)
        if (!std::isfinite(pos[i])) throw NumericError("infonce_loss: non-finite positive energy at index " + std::to_string(i));
    if (std::size_t bad = neg.first_non_finite(); bad != neg.size())
        throw NumericError("infonce_loss: non-finite negative energy at index (" + std::to_string(bad / neg.cols()) + ", " +
                           std::to_string(bad % neg.cols()) + ")");
    const std::size_t k = neg.cols();
    InfoNceResult out;
    out.d_pos.resize(pos.size());
    out.d_neg = Tensor<double>::matrix(pos.size(), k);
    std::vector<double> z(k + 1);
    for (std::size_t i = 0; i < pos.size(); ++i) {
        z[0] = -pos[i];
        for (std::size_t j = 0; j < k; ++j) z[j + 1] = -neg(i, j);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - zmax);
        const double lse = zmax + std::log(sum);
        out.loss += lse - z[0];
        out.d_pos[i] = 1.0 - std::exp(z[0] - lse);
        for (std::size_t j = 0; j < k; ++j) out.d_neg(i, j) = -std::exp(z[j + 1] - lse);
    }
    return out;
}

/// Clean positives plus N(0, sigma_t^2) noise.
inline Matrix make_time_t_positives(const Matrix& clean, std::size_t t, const NoiseSchedule& sched, Rng& rng) {
    detail::require(t < sched.steps, "make_time_t_positives: t must lie in 0..T-1");
    const double sigma = karras_sigma(sched, t);
    Matrix out = clean;
    for (auto& v : out.values()) v = static_cast<float>(v + sigma * rng.normal());
    return out;
}

namespace detail {

/// Mask fixing the conditioning prefix of a role, one row per negative
/// (each conditioning row repeated k_neg times).
inline std::optional<ConditionMask> role_mask(const TupleLayout& l, EnergyRole role, const Matrix& cond, std::size_t k_neg) {
    if (role == EnergyRole::state) return std::nullopt;
    const std::size_t begin = free_slice(l, role).first;
    if (cond.cols() != begin && cond.cols() != l.dim())
        throw ValidationError(std::string("sample_negatives (") + role_name(role) + "): conditioning has " +
                              std::to_string(cond.cols()) + " columns, expected " + std::to_string(begin));
    Matrix values = Matrix::matrix(cond.rows() * k_neg, l.dim());
    for (std::size_t i = 0; i < cond.rows(); ++i)
        for (std::size_t j = 0; j < k_neg; ++j)
            for (std::size_t c = 0; c < begin; ++c) values(i * k_neg + j, c) = cond(i, c);
    return ConditionMask::on_range(l.dim(), 0, begin, std::move(values));
}

}  // namespace detail

/// Negatives for `groups` positives, k_neg each (group-major rows), taken from
/// the reverse process stopped at step t, i.e. at noise level sigma_t. For the
/// action and next-state roles the conditioning prefix is held at `cond`.
/// Returns the free slice only.
template <DenoiserLike D>
Matrix sample_negatives(const D& d, const TupleLayout& layout, EnergyRole role, const Matrix& cond, std::size_t groups,
                        std::size_t t, std::size_t k_neg, const NoiseSchedule& sched, std::uint64_t seed) {
    detail::require(t < sched.steps, "sample_negatives: t must lie in 0..T-1");
    detail::require(k_neg >= 1 && groups >= 1, "sample_negatives: need at least one negative");
    if (role != EnergyRole::state) detail::require(cond.rows() == groups, "sample_negatives: one conditioning row per group");
    auto mask = detail::role_mask(layout, role, cond, k_neg);
    auto [b, e] = free_slice(layout, role);
    Matrix out = Matrix::matrix(groups * k_neg, e - b);
    SamplerConfig cfg;
    cfg.seed = seed;
    IntegrationOptions opts;
    opts.stop_step = std::max<std::size_t>(t, 1);  // stop_step 0 would mean "run to T"
    opts.observer = [&](std::size_t step, const Matrix& xs, std::size_t first) {
        if (step != t) return;
        for (std::size_t r = 0; r < xs.rows(); ++r)
            for (std::size_t c = b; c < e; ++c) out(first + r, c - b) = xs(r, c);
    };
    reverse_sde_sample(d, nullptr, sched, cfg, groups * k_neg, layout.dim(), mask ? &*mask : nullptr, opts);
    return out;
}

/// Free-slice negatives at every step 0..T-1 from a single reverse pass.
template <DenoiserLike D>
std::vector<Matrix> sample_negative_ladder(const D& d, const TupleLayout& layout, EnergyRole role, const Matrix& cond,
                                           std::size_t groups, std::size_t k_neg, const NoiseSchedule& sched,
                                           std::uint64_t seed) {
    auto mask = detail::role_mask(layout, role, cond, k_neg);
    const std::size_t n = groups * k_neg;
    auto [b, e] = free_slice(layout, role);
    std::vector<Matrix> ladder(sched.steps, Matrix::matrix(n, e - b));
    SamplerConfig cfg;
    cfg.seed = seed;
    IntegrationOptions opts;
    opts.stop_step = sched.steps - 1;
    opts.observer = [&](std::size_t step, const Matrix& xs, std::size_t first) {
        for (std::size_t r = 0; r < xs.rows(); ++r)
            for (std::size_t c = b; c < e; ++c) ladder[step](first + r, c - b) = xs(r, c);
    };
    reverse_sde_sample(d, nullptr, sched, cfg, n, layout.dim(), mask ? &*mask : nullptr, opts);
    return ladder;
}

/// Fixed-capacity FIFO of the most recent items.
template <class T>
class PositiveBuffer {
public:
    explicit PositiveBuffer(std::size_t capacity = 1000) : capacity_(capacity) {
        detail::require(capacity > 0, "positive buffer: capacity must be positive");
    }

    void push(const T& item) {
        if (items_.size() == capacity_) items_.pop_front();
        items_.push_back(item);
    }

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return items_.empty(); }
    const T& operator[](std::size_t i) const { return items_[i]; }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::size_t capacity_;
    std::deque<T> items_;
};

struct EnergyTrainConfig {
    std::size_t k = 64;          ///< state and transition positives per pass
    std::size_t k_neg = 10;      ///< negatives per positive
    std::size_t k1 = 64;         ///< states per action batch
    std::size_t k2 = 1;          ///< actions per state
    double lr = 1e-3;
    bool cosine = true;
    std::size_t iterations = 800;       ///< Adam updates per energy
    std::size_t updates_per_pass = 16;  ///< updates sharing one recorded negative pass
    std::size_t hidden = 256;
    std::size_t depth = 2;
    double online_fraction = 0.5;  ///< share of E2/E3 positives drawn from the online pool
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(k >= 1 && k1 >= 1 && k2 >= 1, "energy config: K, K1, K2 must be >= 1");
        detail::require(k_neg >= 10, "energy config: K_neg must be >= 10");
        detail::require(iterations >= 1 && updates_per_pass >= 1, "energy config: iterations must be >= 1");
        detail::require(lr > 0, "energy config: learning rate must be positive");
        detail::require(online_fraction >= 0 && online_fraction <= 1, "energy config: online fraction must be in [0,1]");
    }
};

/// The three energies; roles whose slice is empty in the layout are absent.
struct EnergySet {
    TupleLayout layout;
    std::array<std::optional<EnergyNet>, 3> nets;

    EnergyNet* get(EnergyRole r) { return nets[static_cast<int>(r)] ? &*nets[static_cast<int>(r)] : nullptr; }
    const EnergyNet* get(EnergyRole r) const {
        return nets[static_cast<int>(r)] ? &*nets[static_cast<int>(r)] : nullptr;
    }

    void save(Checkpoint& ck) const {
        ck.put_scalar("energy.layout.state", static_cast<double>(layout.state));
        ck.put_scalar("energy.layout.action", static_cast<double>(layout.action));
        ck.put_scalar("energy.layout.next_state", static_cast<double>(layout.next_state));
        for (EnergyRole r : kRoles)
            if (auto* e = get(r)) e->save(ck, std::string("energy.") + role_name(r));
    }

    static EnergySet load(const Checkpoint& ck) {
        EnergySet s;
        s.layout = {static_cast<std::size_t>(ck.scalar("energy.layout.state")),
                    static_cast<std::size_t>(ck.scalar("energy.layout.action")),
                    static_cast<std::size_t>(ck.scalar("energy.layout.next_state"))};
        for (EnergyRole r : kRoles) {
            const std::string p = std::string("energy.") + role_name(r);
            if (ck.has(p + ".widths")) s.nets[static_cast<int>(r)] = EnergyNet::load(ck, p);
        }
        return s;
    }
};

struct GuidanceOptions {
    std::array<bool, 3> use{true, true, true};  ///< per-role switch (ablation)
    bool free_slice_only = false;               ///< stop gradients into conditioning slices
};

/// grad_x [E1(s) + E2(a|s) + E3(s'|s,a)] at noise level sigma, full tuple width.
inline Matrix guidance_gradient(const EnergySet& energies, const Matrix& x, double sigma, const GuidanceOptions& opt = {}) {
    if (!(sigma > 0)) throw ValidationError("guidance_gradient: sigma must be positive");
    const TupleLayout& l = energies.layout;
    if (x.cols() != l.dim())
        throw ValidationError("guidance_gradient: input has " + std::to_string(x.cols()) + " columns, tuple has " +
                              std::to_string(l.dim()));
    Matrix g = Matrix::matrix(x.rows(), x.cols());
    for (EnergyRole r : kRoles) {
        const EnergyNet* e = energies.get(r);
        if (!e || !opt.use[static_cast<int>(r)]) continue;
        Matrix gr = e->input_grad(x, sigma);
        if (std::size_t bad = gr.first_non_finite(); bad != gr.size())
            throw NumericError(std::string("guidance_gradient: non-finite gradient from the ") + role_name(r) +
                               " energy (row " + std::to_string(bad / gr.cols()) + ")");
        const std::size_t begin = opt.free_slice_only ? free_slice(l, r).first : 0;
        for (std::size_t row = 0; row < x.rows(); ++row)
            for (std::size_t c = begin; c < gr.cols(); ++c) g(row, c) += gr(row, c);
    }
    return g;
}

inline GuidanceFn make_guidance(const EnergySet& energies, GuidanceOptions opt = {}) {
    return [&energies, opt](const Matrix& x, double sigma) { return guidance_gradient(energies, x, sigma, opt); };
}

/// Maps a batch of states to one action row each.
using PolicyFn = std::function<Matrix(const Matrix& states)>;

/// Positive sources for energy training. All matrices are in the denoiser's
/// (standardized) coordinates with the full tuple layout.
struct EnergyData {
    Matrix recent;   ///< positive-buffer tuples (on-policy state source)
    Matrix online;   ///< online buffer tuples
    Matrix offline;  ///< offline buffer tuples
    /// Current policy on standardized states, returning standardized actions.
    PolicyFn policy;
};

struct TrainedEnergies {
    EnergySet energies;
    std::array<std::vector<double>, 3> loss_trace;  ///< mean InfoNCE per positive, per update
};

namespace detail {

inline Matrix draw_rows(const Matrix& src, std::size_t n, Rng& rng) {
    Matrix out = Matrix::matrix(n, src.cols());
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t i = rng.index(src.rows());
        std::copy_n(src.data() + i * src.cols(), src.cols(), out.data() + r * src.cols());
    }
    return out;
}

inline Matrix draw_mixture(const Matrix& online, const Matrix& offline, double online_fraction, std::size_t n, Rng& rng) {
    const bool has_on = online.rows() > 0, has_off = offline.rows() > 0;
    detail::require(has_on || has_off, "train_energies: online and offline pools are both empty");
    const std::size_t cols = has_on ? online.cols() : offline.cols();
    Matrix out = Matrix::matrix(n, cols);
    for (std::size_t r = 0; r < n; ++r) {
        const bool pick_on = has_on && (!has_off || rng.bernoulli(online_fraction));
        const Matrix& src = pick_on ? online : offline;
        const std::size_t i = rng.index(src.rows());
        std::copy_n(src.data() + i * cols, cols, out.data() + r * cols);
    }
    return out;
}

/// One InfoNCE update for a role at step t.
/// `pos` holds clean positive prefixes [P x w]; `neg_free` the free slices of
/// the negatives at step t [(P*k_neg) x free]; `cond_width` the conditioning width.
inline double energy_update(EnergyNet& net, AdamState<float>& adam, const Matrix& pos, const Matrix& neg_free,
                            std::size_t cond_width, std::size_t k_neg, std::size_t t, const NoiseSchedule& sched,
                            Rng& rng) {
    const double sigma = karras_sigma(sched, t);
    const std::size_t p = pos.rows(), w = pos.cols();
    Matrix noisy = make_time_t_positives(pos, t, sched, rng);
    Matrix all = Matrix::matrix(p * (k_neg + 1), w);
    for (std::size_t i = 0; i < p; ++i) {
        std::copy_n(noisy.data() + i * w, w, all.data() + i * w);
        for (std::size_t j = 0; j < k_neg; ++j) {
            float* dst = all.data() + (p + i * k_neg + j) * w;
            std::copy_n(noisy.data() + i * w, cond_width, dst);
            std::copy_n(neg_free.data() + (i * k_neg + j) * neg_free.cols(), neg_free.cols(), dst + cond_width);
        }
    }
    auto tr = net.trace(all, sigma);
    const float c = static_cast<float>(EnergyNet::scale(sigma));
    std::vector<double> e_pos(p);
    Tensor<double> e_neg = Tensor<double>::matrix(p, k_neg);
    for (std::size_t i = 0; i < p; ++i) e_pos[i] = c * tr.output[i];
    for (std::size_t i = 0; i < p * k_neg; ++i) e_neg[i] = c * tr.output[p + i];
    InfoNceResult res = infonce_loss(e_pos, e_neg);
    const double inv_p = 1.0 / static_cast<double>(p);
    std::vector<float> up(all.rows());
    for (std::size_t i = 0; i < p; ++i) up[i] = static_cast<float>(res.d_pos[i] * inv_p);
    for (std::size_t i = 0; i < p * k_neg; ++i) up[p + i] = static_cast<float>(res.d_neg[i] * inv_p);
    auto grads = net.param_grads(tr, up, sigma);
    adam_step(net.net().parameters(), grads, adam);
    return res.loss * inv_p;
}

}  // namespace detail

/// Contrastive training of the three energies against denoiser negatives.
///
/// Each recorded reverse pass supplies negatives at every step; the next
/// `updates_per_pass` updates draw their step t uniformly from 0..T-1 and
/// use fresh positive noise. E1 positives come from `recent`, E2 positives
/// pair mixture states with policy actions, E3 positives are mixture tuples.
template <DenoiserLike D>
TrainedEnergies train_energies(const D& d, const TupleLayout& layout, const EnergyData& data, const EnergyTrainConfig& cfg,
                               const NoiseSchedule& sched) {
    cfg.validate();
    sched.validate();
    if (data.recent.rows() == 0) throw ValidationError("train_energies: no on-policy data yet (positive buffer is empty)");
    for (const Matrix* m : {&data.recent, &data.online, &data.offline})
        if (m->rows() > 0 && m->cols() != layout.dim())
            throw ValidationError("train_energies: buffer has " + std::to_string(m->cols()) + " columns, tuple has " +
                                  std::to_string(layout.dim()));
    const bool need_policy = role_active(layout, EnergyRole::action);
    if (need_policy && !data.policy) throw ValidationError("train_energies: action energy needs a policy");

    Rng rng(cfg.seed, "energy-train");
    TrainedEnergies out;
    out.energies.layout = layout;
    std::array<std::optional<AdamState<float>>, 3> adam;
    for (EnergyRole r : kRoles) {
        if (!role_active(layout, r)) continue;
        EnergyNet net(r, input_width(layout, r), cfg.hidden, cfg.depth);
        net.init(rng);
        out.energies.nets[static_cast<int>(r)] = std::move(net);
        adam[static_cast<int>(r)].emplace(out.energies.get(r)->net().parameters(), cfg.lr);
    }

    const std::size_t passes = (cfg.iterations + cfg.updates_per_pass - 1) / cfg.updates_per_pass;
    std::size_t done = 0;
    for (std::size_t pass = 0; pass < passes; ++pass) {
        const std::size_t updates = std::min(cfg.updates_per_pass, cfg.iterations - done);
        std::array<Matrix, 3> pos;
        std::array<std::vector<Matrix>, 3> ladders;
        for (EnergyRole r : kRoles) {
            if (!role_active(layout, r)) continue;
            const int ri = static_cast<int>(r);
            Matrix tuples;
            if (r == EnergyRole::state) {
                tuples = detail::draw_rows(data.recent, cfg.k, rng);
            } else if (r == EnergyRole::action) {
                Matrix states = detail::draw_mixture(data.online, data.offline, cfg.online_fraction, cfg.k1, rng);
                tuples = Matrix::matrix(cfg.k1 * cfg.k2, layout.dim());
                for (std::size_t kk = 0; kk < cfg.k2; ++kk) {
                    Matrix a = data.policy(slice_cols(states, 0, layout.state));
                    if (a.rows() != cfg.k1 || a.cols() != layout.action)
                        throw ValidationError("train_energies: policy returned shape " + shape_str(a.shape()));
                    for (std::size_t i = 0; i < cfg.k1; ++i) {
                        const std::size_t row = i * cfg.k2 + kk;
                        std::copy_n(states.data() + i * layout.dim(), layout.state, tuples.data() + row * layout.dim());
                        std::copy_n(a.data() + i * layout.action, layout.action,
                                    tuples.data() + row * layout.dim() + layout.state);
                    }
                }
            } else {
                tuples = detail::draw_mixture(data.online, data.offline, cfg.online_fraction, cfg.k, rng);
            }
            pos[ri] = slice_cols(tuples, 0, input_width(layout, r));
            ladders[ri] = sample_negative_ladder(d, layout, r, tuples, tuples.rows(), cfg.k_neg, sched,
                                                 derive_seed(cfg.seed, std::string("negatives-") + role_name(r), pass));
        }
        for (std::size_t u = 0; u < updates; ++u) {
            const std::size_t t = rng.index(sched.steps);
            const double lr = cfg.cosine ? cosine_lr(cfg.lr, done + u, cfg.iterations, 0.05) : cfg.lr;
            for (EnergyRole r : kRoles) {
                if (!role_active(layout, r)) continue;
                const int ri = static_cast<int>(r);
                adam[ri]->lr = lr;
                const double loss = detail::energy_update(*out.energies.get(r), *adam[ri], pos[ri], ladders[ri][t],
                                                          free_slice(layout, r).first, cfg.k_neg, t, sched, rng);
                out.loss_trace[ri].push_back(loss);
            }
        }
        done += updates;
    }
    return out;
}

}  // namespace edis
