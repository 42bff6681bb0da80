#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "adam.hpp"
#include "maze.hpp"
#include "mlp.hpp"

namespace edis {

using ActionValues = std::array<double, kNumActions>;
using Batch = std::vector<const Transition*>;

inline Batch batch_of(const std::vector<Transition>& items) {
    Batch b;
    b.reserve(items.size());
    for (const auto& t : items) b.push_back(&t);
    return b;
}

/// Greedy action with first-action tie-break.
inline Action greedy(const ActionValues& q) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < kNumActions; ++a)
        if (q[a] > q[best]) best = a;
    return static_cast<Action>(best);
}

inline double max_value(const ActionValues& q) { return *std::max_element(q.begin(), q.end()); }

inline double logsumexp(const ActionValues& q) {
    const double m = max_value(q);
    double s = 0.0;
    for (double v : q) s += std::exp(v - m);
    return m + std::log(s);
}

/// |S| x |A| table over maze cells; states are snapped to their nearest cell.
class TabularQ {
public:
    TabularQ() = default;
    TabularQ(const MazeSpec& spec, double init = 0.0)
        : width_(spec.width), height_(spec.height), table_(spec.num_cells() * kNumActions, init) {}

    ActionValues values(const float* s) const { return row(cell_index(s)); }

    ActionValues row(std::size_t cell) const {
        ActionValues q;
        std::copy_n(table_.begin() + static_cast<std::ptrdiff_t>(cell * kNumActions), kNumActions, q.begin());
        return q;
    }

    double& at(std::size_t cell, Action a) { return table_[cell * kNumActions + static_cast<std::size_t>(a)]; }
    double at(std::size_t cell, Action a) const { return table_[cell * kNumActions + static_cast<std::size_t>(a)]; }

    std::size_t cell_index(const float* s) const {
        const Cell c = nearest_cell(s);
        if (c.row < 0 || c.row >= height_ || c.col < 0 || c.col >= width_)
            throw ValidationError("tabular Q: state (" + std::to_string(s[0]) + ", " + std::to_string(s[1]) +
                                  ") is off the grid");
        return static_cast<std::size_t>(c.row * width_ + c.col);
    }

    std::size_t cells() const noexcept { return table_.size() / kNumActions; }
    const std::vector<double>& table() const noexcept { return table_; }
    std::vector<double>& table() noexcept { return table_; }
    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    friend bool operator==(const TabularQ&, const TabularQ&) = default;

    void save(Checkpoint& ck) const {
        std::vector<float> v(table_.begin(), table_.end());
        ck.put("q.table", Shape{cells(), kNumActions}, v);
        ck.put_scalar("q.width", width_);
        ck.put_scalar("q.height", height_);
    }

    static TabularQ load(const Checkpoint& ck) {
        TabularQ q;
        q.width_ = static_cast<int>(ck.scalar("q.width"));
        q.height_ = static_cast<int>(ck.scalar("q.height"));
        const Matrix& t = ck.get("q.table");
        if (t.size() != static_cast<std::size_t>(q.width_ * q.height_) * kNumActions)
            throw FormatError("checkpoint: q.table does not match the stored grid");
        q.table_.assign(t.values().begin(), t.values().end());
        return q;
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> table_;
};

struct QUpdateOptions {
    double gamma = 0.99;
    double alpha = 0.0;       ///< conservative penalty weight
    double floor = -1.0;      ///< value given to actions the batch never shows (alpha > 0 only)
};

namespace detail {

inline double bellman_target(const Transition& t, double gamma, double next_max) {
    const double y = t.r + (t.done ? 0.0 : gamma * next_max);
    if (!std::isfinite(y)) throw NumericError("q_update: non-finite target");
    return y;
}

/// Minimizer over the seen actions of
///   sum_a n_a (q_a - ybar_a)^2 / 2 + alpha (N lse(q) - sum_a n_a q_a),
/// with unseen actions pinned at `floor`. Newton with backtracking; the
/// objective is strictly convex in the seen coordinates.
inline ActionValues conservative_fit(const ActionValues& n, const ActionValues& ybar, double alpha, double floor) {
    ActionValues q{};
    double total = 0.0;
    for (std::size_t a = 0; a < kNumActions; ++a) {
        q[a] = n[a] > 0 ? ybar[a] : floor;
        total += n[a];
    }
    auto objective = [&](const ActionValues& v) {
        double f = alpha * total * logsumexp(v);
        for (std::size_t a = 0; a < kNumActions; ++a)
            if (n[a] > 0) f += 0.5 * n[a] * (v[a] - ybar[a]) * (v[a] - ybar[a]) - alpha * n[a] * v[a];
        return f;
    };
    std::vector<std::size_t> seen;
    for (std::size_t a = 0; a < kNumActions; ++a)
        if (n[a] > 0) seen.push_back(a);
    const std::size_t k = seen.size();
    for (int it = 0; it < 100; ++it) {
        const double lse = logsumexp(q);
        ActionValues p{};
        for (std::size_t a = 0; a < kNumActions; ++a) p[a] = std::exp(q[a] - lse);
        std::array<double, kNumActions> g{};
        std::array<std::array<double, kNumActions>, kNumActions> h{};
        double gnorm = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t a = seen[i];
            g[i] = n[a] * (q[a] - ybar[a]) + alpha * (total * p[a] - n[a]);
            gnorm = std::max(gnorm, std::abs(g[i]));
            for (std::size_t j = 0; j < k; ++j) {
                const std::size_t b = seen[j];
                h[i][j] = alpha * total * ((a == b ? p[a] : 0.0) - p[a] * p[b]) + (a == b ? n[a] : 0.0);
            }
        }
        if (gnorm < 1e-12) break;
        // Gaussian elimination, k <= 4, H is symmetric positive definite
        std::array<double, kNumActions> step = g;
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t r = c + 1; r < k; ++r) {
                const double f = h[r][c] / h[c][c];
                for (std::size_t j = c; j < k; ++j) h[r][j] -= f * h[c][j];
                step[r] -= f * step[c];
            }
        }
        for (std::size_t c = k; c-- > 0;) {
            for (std::size_t j = c + 1; j < k; ++j) step[c] -= h[c][j] * step[j];
            step[c] /= h[c][c];
        }
        const double f0 = objective(q);
        double t = 1.0;
        ActionValues cand = q;
        for (int ls = 0; ls < 40; ++ls) {
            for (std::size_t i = 0; i < k; ++i) cand[seen[i]] = q[seen[i]] - t * step[i];
            if (objective(cand) <= f0) break;
            t *= 0.5;
        }
        q = cand;
    }
    return q;
}

}  // namespace detail

/// Fitted-Q step on a batch: target r + gamma max_a' Q(s', a') (0 past the exit).
/// Each (s, a) in the batch is set to the exact minimizer of its squared error,
/// plus, when alpha > 0, the conservative penalty alpha (logsumexp_a Q(s,a) - Q(s,a_data))
/// solved jointly over the actions of each state.
inline void q_update(TabularQ& q, const Batch& batch, const QUpdateOptions& opt) {
    detail::require(!batch.empty(), "q_update: empty batch");
    detail::require(opt.alpha >= 0, "q_update: alpha must be nonnegative");
    struct Acc {
        ActionValues n{};
        ActionValues sum{};
    };
    std::map<std::size_t, Acc> per_state;
    for (const Transition* t : batch) {
        const double next = t->done ? 0.0 : max_value(q.values(t->s_next.data()));
        const double y = detail::bellman_target(*t, opt.gamma, next);
        Acc& acc = per_state[q.cell_index(t->s.data())];
        const auto a = static_cast<std::size_t>(decode_action(t->a.data()));
        acc.n[a] += 1.0;
        acc.sum[a] += y;
    }
    for (const auto& [cell, acc] : per_state) {
        ActionValues ybar{};
        for (std::size_t a = 0; a < kNumActions; ++a) ybar[a] = acc.n[a] > 0 ? acc.sum[a] / acc.n[a] : 0.0;
        if (opt.alpha == 0.0) {
            for (std::size_t a = 0; a < kNumActions; ++a)
                if (acc.n[a] > 0) q.at(cell, static_cast<Action>(a)) = ybar[a];
            continue;
        }
        const ActionValues fit = detail::conservative_fit(acc.n, ybar, opt.alpha, opt.floor);
        for (std::size_t a = 0; a < kNumActions; ++a) q.at(cell, static_cast<Action>(a)) = fit[a];
    }
}

/// Per-action values from an MLP over the state vector.
class MlpQ {
public:
    MlpQ() = default;
    MlpQ(std::size_t state_dim, std::size_t hidden, std::size_t depth, double lr, Rng& rng) {
        std::vector<std::size_t> widths{state_dim};
        for (std::size_t i = 0; i < depth; ++i) widths.push_back(hidden);
        widths.push_back(kNumActions);
        net_ = Mlp<float>(widths, true);
        net_.init(rng);
        adam_.emplace(net_.parameters(), lr);
    }

    ActionValues values(const float* s) const {
        Matrix x = Matrix::matrix(1, net_.input_width());
        std::copy_n(s, net_.input_width(), x.data());
        Matrix y = mlp_forward(net_, x);
        ActionValues q;
        for (std::size_t a = 0; a < kNumActions; ++a) q[a] = y[a];
        return q;
    }

    Mlp<float>& net() noexcept { return net_; }
    const Mlp<float>& net() const noexcept { return net_; }
    AdamState<float>& adam() { return *adam_; }

private:
    Mlp<float> net_;
    std::optional<AdamState<float>> adam_;
};

/// Loss of one MLP Q step: mean squared TD error plus alpha * mean(lse - Q(s, a_data)).
struct MlpQLoss {
    double td = 0.0;
    double penalty = 0.0;
};

/// Loss and parameter gradients for a batch (targets held fixed).
inline std::pair<MlpQLoss, std::vector<Matrix>> mlp_q_loss(const MlpQ& q, const Batch& batch, const QUpdateOptions& opt) {
    detail::require(!batch.empty(), "q_update: empty batch");
    const std::size_t n = batch.size(), ds = q.net().input_width();
    Matrix s = Matrix::matrix(n, ds), s2 = Matrix::matrix(n, ds);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(batch[i]->s.data(), ds, s.data() + i * ds);
        std::copy_n(batch[i]->s_next.data(), ds, s2.data() + i * ds);
    }
    Matrix next = mlp_forward(q.net(), s2);
    auto tr = mlp_trace(q.net(), s);
    Matrix up = Matrix::matrix(n, kNumActions);
    MlpQLoss loss;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        ActionValues qn, qs;
        for (std::size_t a = 0; a < kNumActions; ++a) qn[a] = next(i, a), qs[a] = tr.output(i, a);
        const double y = detail::bellman_target(*batch[i], opt.gamma, max_value(qn));
        const auto a = static_cast<std::size_t>(decode_action(batch[i]->a.data()));
        const double err = qs[a] - y;
        loss.td += err * err * inv;
        up(i, a) += static_cast<float>(2.0 * err * inv);
        if (opt.alpha > 0) {
            const double lse = logsumexp(qs);
            loss.penalty += opt.alpha * (lse - qs[a]) * inv;
            for (std::size_t b = 0; b < kNumActions; ++b) up(i, b) += static_cast<float>(opt.alpha * inv * std::exp(qs[b] - lse));
            up(i, a) -= static_cast<float>(opt.alpha * inv);
        }
    }
    if (!std::isfinite(loss.td + loss.penalty)) throw NumericError("q_update: non-finite loss");
    return {loss, mlp_backward(q.net(), tr, up).params};
}

/// One Adam step on the MLP Q loss.
inline MlpQLoss q_update(MlpQ& q, const Batch& batch, const QUpdateOptions& opt) {
    auto [loss, grads] = mlp_q_loss(q, batch, opt);
    adam_step(q.net().parameters(), grads, q.adam());
    return loss;
}

}  // namespace edis
