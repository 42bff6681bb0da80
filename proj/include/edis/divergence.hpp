#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "adam.hpp"
#include "maze.hpp"
#include "mlp.hpp"

namespace edis {

/// Visit counts over the maze grid.
struct StateHistogram {
    int width = 0;
    int height = 0;
    std::vector<double> counts;

    StateHistogram() = default;
    StateHistogram(int w, int h) : width(w), height(h), counts(static_cast<std::size_t>(w * h), 0.0) {}
    explicit StateHistogram(const MazeSpec& spec) : StateHistogram(spec.width, spec.height) {}

    double total() const {
        double t = 0.0;
        for (double c : counts) t += c;
        return t;
    }

    std::vector<double> normalized() const {
        const double t = total();
        if (!(t > 0)) throw ValidationError("state histogram: no visits");
        std::vector<double> p(counts.size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = counts[i] / t;
        return p;
    }

    /// Counts per 1000 visits, the normalization used for maze visitation plots.
    std::vector<double> per_thousand() const {
        auto p = normalized();
        for (auto& v : p) v *= 1000.0;
        return p;
    }

    void add(Cell c) { counts[static_cast<std::size_t>(c.row * width + c.col)] += 1.0; }
};

/// Jensen-Shannon divergence in nats, 0 log 0 = 0.
inline double js_exact(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw ValidationError("js_exact: histograms have " + std::to_string(p.size()) + " and " + std::to_string(q.size()) +
                              " bins");
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0) js += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0) js += 0.5 * q[i] * std::log(q[i] / m);
    }
    return std::clamp(js, 0.0, std::numbers::ln2);
}

inline double js_exact(const StateHistogram& p, const StateHistogram& q) {
    if (p.width != q.width || p.height != q.height)
        throw ValidationError("js_exact: grid " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                              " does not match " + std::to_string(q.width) + "x" + std::to_string(q.height));
    return js_exact(p.normalized(), q.normalized());
}

/// Histogram of state vectors; rejects off-grid states with their index.
inline StateHistogram visitation_histogram(const std::vector<std::vector<std::vector<float>>>& trajectories,
                                           const MazeSpec& spec) {
    detail::require(!trajectories.empty(), "visitation_histogram: no trajectories");
    StateHistogram h(spec);
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        for (std::size_t j = 0; j < trajectories[i].size(); ++j) {
            const Cell c = nearest_cell(trajectories[i][j].data());
            if (!spec.in_grid(c))
                throw ValidationError("visitation_histogram: state " + std::to_string(j) + " of trajectory " +
                                      std::to_string(i) + " is off the grid");
            h.add(c);
        }
    if (h.total() == 0) throw ValidationError("visitation_histogram: trajectories are empty");
    return h;
}

/// Histogram of the rows of a state matrix; off-grid rows are skipped and counted.
inline StateHistogram state_histogram(const Matrix& states, const MazeSpec& spec, std::size_t* skipped = nullptr) {
    StateHistogram h(spec);
    std::size_t bad = 0;
    for (std::size_t r = 0; r < states.rows(); ++r) {
        const Cell c = nearest_cell(states.data() + r * states.cols());
        if (spec.in_grid(c)) h.add(c);
        else ++bad;
    }
    if (skipped) *skipped = bad;
    return h;
}

struct DiscriminatorConfig {
    std::size_t hidden = 64;
    std::size_t depth = 2;
    std::size_t steps = 2000;
    double lr = 1e-3;
    std::size_t batch = 128;  ///< per class
    double holdout = 0.2;
};

namespace detail {

inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

}  // namespace detail

/// GAN-style JS estimate: fit D on E_p[log D] + E_q[log(1 - D)], evaluate the
/// value on held-out rows, return (V + log 4) / 2 clamped to [0, ln 2].
inline double js_discriminator(const Matrix& p, const Matrix& q, const DiscriminatorConfig& cfg, std::uint64_t seed) {
    detail::require(p.rows() >= 100 && q.rows() >= 100, "js_discriminator: need at least 100 samples per set");
    detail::require(p.cols() == q.cols(), "js_discriminator: sample sets have different dimensions");
    detail::require(cfg.holdout > 0 && cfg.holdout < 1, "js_discriminator: holdout fraction must lie in (0,1)");
    Rng rng(seed, "discriminator");
    const std::size_t dim = p.cols();

    auto split = [&](const Matrix& m, Matrix& train, Matrix& test) {
        std::vector<std::size_t> idx(m.rows());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(cfg.holdout * m.rows())));
        train = Matrix::matrix(m.rows() - n_test, dim);
        test = Matrix::matrix(n_test, dim);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            float* dst = i < n_test ? test.data() + i * dim : train.data() + (i - n_test) * dim;
            std::copy_n(m.data() + idx[i] * dim, dim, dst);
        }
    };
    Matrix p_tr, p_te, q_tr, q_te;
    split(p, p_tr, p_te);
    split(q, q_tr, q_te);

    // pooled training statistics put both classes on a common scale
    std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
    const double n_pool = static_cast<double>(p_tr.rows() + q_tr.rows());
    for (const Matrix* m : {&p_tr, &q_tr})
        for (std::size_t r = 0; r < m->rows(); ++r)
            for (std::size_t c = 0; c < dim; ++c) mean[c] += (*m)(r, c) / n_pool;
    for (const Matrix* m : {&p_tr, &q_tr})
        for (std::size_t r = 0; r < m->rows(); ++r)
            for (std::size_t c = 0; c < dim; ++c) sd[c] += ((*m)(r, c) - mean[c]) * ((*m)(r, c) - mean[c]) / n_pool;
    for (auto& v : sd) v = std::max(std::sqrt(v), 1e-6);
    auto scale = [&](Matrix m) {
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < dim; ++c) m(r, c) = static_cast<float>((m(r, c) - mean[c]) / sd[c]);
        return m;
    };
    p_tr = scale(p_tr), p_te = scale(p_te), q_tr = scale(q_tr), q_te = scale(q_te);

    std::vector<std::size_t> widths{dim};
    for (std::size_t i = 0; i < cfg.depth; ++i) widths.push_back(cfg.hidden);
    widths.push_back(1);
    Mlp<float> net(widths, false);
    net.init(rng);
    AdamState<float> adam(net.parameters(), cfg.lr);

    const std::size_t b = cfg.batch;
    Matrix x = Matrix::matrix(2 * b, dim);
    for (std::size_t it = 0; it < cfg.steps; ++it) {
        for (std::size_t i = 0; i < b; ++i) {
            std::copy_n(p_tr.data() + rng.index(p_tr.rows()) * dim, dim, x.data() + i * dim);
            std::copy_n(q_tr.data() + rng.index(q_tr.rows()) * dim, dim, x.data() + (b + i) * dim);
        }
        auto tr = mlp_trace(net, x);
        Matrix up = Matrix::matrix(2 * b, 1);
        for (std::size_t i = 0; i < 2 * b; ++i) {
            const double d = 1.0 / (1.0 + std::exp(-static_cast<double>(tr.output[i])));
            // gradient of -V per class-mean: p rows push D up, q rows push it down
            up[i] = static_cast<float>((i < b ? d - 1.0 : d) / static_cast<double>(b));
        }
        adam_step(net.parameters(), mlp_backward(net, tr, up).params, adam);
    }

    auto mean_log = [&](const Matrix& m, bool positive) {
        Matrix z = mlp_forward(net, m);
        double s = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) s += detail::log_sigmoid(positive ? z[i] : -z[i]);
        return s / static_cast<double>(z.size());
    };
    const double v = mean_log(p_te, true) + mean_log(q_te, false);
    if (!std::isfinite(v)) throw NumericError("js_discriminator: non-finite value estimate");
    return std::clamp((v + std::log(4.0)) / 2.0, 0.0, std::numbers::ln2);
}

using CellPolicy = std::function<Action(Cell)>;

struct SliceMse {
    double mse = 0.0;
    std::size_t used = 0;
    std::size_t skipped = 0;
};

namespace detail {

inline bool decode_open(const MazeSpec& spec, const std::vector<float>& s, Cell& c) {
    c = nearest_cell(s.data());
    return spec.is_open(c);
}

}  // namespace detail

/// Mean ||a - onehot(policy(s))||^2 over tuples whose s decodes to an open cell.
inline SliceMse action_divergence(const Dataset& tuples, const CellPolicy& policy, const MazeSpec& spec) {
    detail::require(!tuples.empty(), "action_divergence: no tuples");
    SliceMse out;
    for (const auto& t : tuples.items) {
        Cell c;
        if (!detail::decode_open(spec, t.s, c)) {
            ++out.skipped;
            continue;
        }
        const auto ref = one_hot(policy(c));
        double d = 0.0;
        for (std::size_t i = 0; i < kNumActions; ++i) d += (t.a[i] - ref[i]) * (t.a[i] - ref[i]);
        out.mse += d;
        ++out.used;
    }
    if (out.used == 0) throw ValidationError("action_divergence: no tuple decodes to a valid state");
    out.mse /= static_cast<double>(out.used);
    return out;
}

/// Mean ||s' - center(move(s, a))||^2 under the true dynamics.
inline SliceMse transition_divergence(const Dataset& tuples, const MazeSpec& spec) {
    detail::require(!tuples.empty(), "transition_divergence: no tuples");
    SliceMse out;
    for (const auto& t : tuples.items) {
        Cell c;
        if (!detail::decode_open(spec, t.s, c)) {
            ++out.skipped;
            continue;
        }
        const auto ref = cell_center(spec.move(c, decode_action(t.a.data())));
        double d = 0.0;
        for (std::size_t i = 0; i < kStateDim; ++i) d += (t.s_next[i] - ref[i]) * (t.s_next[i] - ref[i]);
        out.mse += d;
        ++out.used;
    }
    if (out.used == 0) throw ValidationError("transition_divergence: no tuple decodes to a valid state");
    out.mse /= static_cast<double>(out.used);
    return out;
}

struct DivergenceReport {
    std::string source;
    std::string estimator = "exact";
    double state_js = 0.0;
    double action_mse = 0.0;
    double transition_mse = 0.0;
    std::size_t n = 0;

    static constexpr const char* kCsvHeader = "source,estimator,state_js,action_mse,transition_mse,n";

    std::string csv_row() const {
        std::ostringstream os;
        os.precision(6);
        os << std::fixed << source << ',' << estimator << ',' << state_js << ',' << action_mse << ',' << transition_mse
           << ',' << n;
        return os.str();
    }
};

/// Full report of generated tuples against a reference state sample.
inline DivergenceReport divergence_report(const std::string& source, const Dataset& generated, const Matrix& reference_states,
                                          const CellPolicy& policy, const MazeSpec& spec) {
    detail::require(!generated.empty(), "divergence_report: no generated tuples");
    DivergenceReport rep;
    rep.source = source;
    rep.n = generated.size();
    rep.state_js = js_exact(state_histogram(generated.states(), spec), state_histogram(reference_states, spec));
    rep.action_mse = action_divergence(generated, policy, spec).mse;
    rep.transition_mse = transition_divergence(generated, spec).mse;
    return rep;
}

}  // namespace edis
