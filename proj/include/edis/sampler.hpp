#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "denoiser.hpp"

namespace edis {

struct SamplerConfig {
    double beta = 0.0;            ///< constant churn; 0 is the probability-flow limit
    double guidance_scale = 1.0;  ///< multiplier on the guidance gradient
    std::uint64_t seed = 0;
    std::size_t chunk = 512;      ///< rows integrated together; never changes results

    void validate() const {
        detail::require(beta >= 0, "sampler: beta must be nonnegative");
        detail::require(guidance_scale >= 0, "sampler: guidance scale must be nonnegative");
        detail::require(chunk >= 1, "sampler: chunk must be positive");
    }
};

/// Coordinates to hold at given values during sampling (inpainting).
/// `values` has one row shared by all samples or one row per sample.
struct ConditionMask {
    std::vector<bool> fixed;
    Matrix values;

    static ConditionMask on_range(std::size_t dim, std::size_t begin, std::size_t end, Matrix values) {
        ConditionMask m;
        m.fixed.assign(dim, false);
        for (std::size_t i = begin; i < end; ++i) m.fixed[i] = true;
        m.values = std::move(values);
        return m;
    }

    void validate(std::size_t dim, std::size_t n) const {
        if (fixed.size() != dim)
            throw ValidationError("condition mask: length " + std::to_string(fixed.size()) + " does not match data dimension " +
                                  std::to_string(dim));
        if (values.cols() != dim || (values.rows() != 1 && values.rows() != n))
            throw ValidationError("condition mask: values shape " + shape_str(values.shape()) + " incompatible with " +
                                  std::to_string(n) + " samples of dimension " + std::to_string(dim));
        for (std::size_t r = 0; r < values.rows(); ++r)
            for (std::size_t c = 0; c < dim; ++c)
                if (fixed[c] && !std::isfinite(values(r, c)))
                    throw ValidationError("condition mask: non-finite conditioning value at row " + std::to_string(r));
    }

    float value(std::size_t row, std::size_t c) const { return values.rows() == 1 ? values(0, c) : values(row, c); }
};

/// Gradient of an energy with respect to a batch, at a noise level.
using GuidanceFn = std::function<Matrix(const Matrix& x, double sigma)>;

/// Called after each step with (step index reached, batch state, index of first row).
using StepObserver = std::function<void(std::size_t step, const Matrix& x, std::size_t first_row)>;

struct IntegrationOptions {
    std::size_t stop_step = 0;  ///< 0 means run to t = T
    StepObserver observer;
};

namespace detail {

template <DenoiserLike D>
void integrate_chunk(const D& d, const GuidanceFn* guidance, const std::vector<double>& ladder, const SamplerConfig& cfg,
                     const ConditionMask* mask, std::size_t first, std::size_t rows, std::size_t dim, std::size_t stop,
                     const StepObserver& observer, Matrix& out) {
    std::vector<Rng> streams;
    streams.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) streams.emplace_back(cfg.seed, "sample", first + r);

    auto clamp = [&](Matrix& x, double sigma) {
        if (!mask) return;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < dim; ++c)
                if (mask->fixed[c])
                    x(r, c) = static_cast<float>(mask->value(first + r, c) + sigma * streams[r].normal());
    };

    Matrix x = Matrix::matrix(rows, dim);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < dim; ++c) x(r, c) = static_cast<float>(ladder[0] * streams[r].normal());
    clamp(x, ladder[0]);
    if (observer) observer(0, x, first);

    for (std::size_t i = 0; i < stop; ++i) {
        const double sigma = ladder[i], next = ladder[i + 1], h = sigma - next;
        Matrix score = score_from_denoiser(d, x, sigma);
        if (guidance && *guidance && cfg.guidance_scale != 0.0) {
            Matrix g = (*guidance)(x, sigma);
            if (g.shape() != x.shape())
                throw ValidationError("sampler: guidance returned shape " + shape_str(g.shape()) + ", expected " +
                                      shape_str(x.shape()));
            const float w = static_cast<float>(cfg.guidance_scale);
            for (std::size_t k = 0; k < score.size(); ++k) score[k] -= w * g[k];
        }
        const float drift = static_cast<float>(h * (sigma + cfg.beta * sigma * sigma));
        for (std::size_t k = 0; k < x.size(); ++k) x[k] += drift * score[k];
        if (cfg.beta > 0) {
            const double amp = sigma * std::sqrt(2.0 * cfg.beta * h);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < dim; ++c) x(r, c) += static_cast<float>(amp * streams[r].normal());
        }
        clamp(x, next);
        const std::size_t bad = x.first_non_finite();
        if (bad != x.size())
            throw NumericError("sampler: non-finite state at step " + std::to_string(i) + " (sigma " +
                               std::to_string(sigma) + ", sample " + std::to_string(first + bad / dim) + ")");
        if (observer) observer(i + 1, x, first);
    }
    std::copy_n(x.data(), x.size(), out.data() + first * dim);
}

}  // namespace detail

/// Euler-Maruyama integration of the reverse-time SDE over the sigma ladder.
///
/// Sample i draws all of its noise from its own stream derived from
/// (cfg.seed, i), so results do not depend on chunking. When `guidance` is
/// given, the score becomes score - guidance_scale * guidance(x, sigma). When
/// `mask` is given, fixed coordinates are reset to value + sigma * noise after
/// every step. With opts.stop_step = t the state at sigma_t is returned.
template <DenoiserLike D>
Matrix reverse_sde_sample(const D& d, const GuidanceFn* guidance, const NoiseSchedule& sched, const SamplerConfig& cfg,
                          std::size_t n, std::size_t dim, const ConditionMask* mask = nullptr,
                          const IntegrationOptions& opts = {}) {
    detail::require(n >= 1, "reverse_sde_sample: need at least one sample");
    cfg.validate();
    const auto ladder = karras_ladder(sched);
    const std::size_t stop = opts.stop_step == 0 ? sched.steps : opts.stop_step;
    detail::require(stop <= sched.steps, "reverse_sde_sample: stop step beyond T");
    if (mask) mask->validate(dim, n);
    Matrix out = Matrix::matrix(n, dim);
    for (std::size_t first = 0; first < n; first += cfg.chunk) {
        const std::size_t rows = std::min(cfg.chunk, n - first);
        detail::integrate_chunk(d, guidance, ladder, cfg, mask, first, rows, dim, stop, opts.observer, out);
    }
    return out;
}

template <DenoiserLike D>
Matrix reverse_sde_sample(const D& d, const NoiseSchedule& sched, const SamplerConfig& cfg, std::size_t n,
                          std::size_t dim) {
    return reverse_sde_sample(d, nullptr, sched, cfg, n, dim);
}

inline Matrix reverse_sde_sample(const Denoiser& d, const GuidanceFn* guidance, const NoiseSchedule& sched,
                                 const SamplerConfig& cfg, std::size_t n, const ConditionMask* mask = nullptr,
                                 const IntegrationOptions& opts = {}) {
    return reverse_sde_sample(d, guidance, sched, cfg, n, d.dim(), mask, opts);
}

}  // namespace edis
