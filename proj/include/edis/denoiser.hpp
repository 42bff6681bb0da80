#pragma once

#include <cmath>
#include <concepts>
#include <numbers>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "mlp.hpp"
#include "random.hpp"
#include "schedule.hpp"

namespace edis {

/// Anything that maps a noised batch and a noise level to a clean estimate.
template <class D>
concept DenoiserLike = requires(const D& d, const Matrix& x, double sigma) {
    { d(x, sigma) } -> std::convertible_to<Matrix>;
};

inline constexpr std::size_t kSigmaFeatures = 4;

/// Four Fourier features of c = ln(sigma) / 4. The half-frequency pair keeps the
/// embedding injective over the whole schedule range.
inline void sigma_features(double sigma, float* out) {
    if (!(sigma > 0)) throw ValidationError("noise level must be positive: networks are conditioned on log sigma");
    const double c = std::log(sigma) / 4.0;
    const double pi = std::numbers::pi;
    out[0] = static_cast<float>(std::sin(0.5 * pi * c));
    out[1] = static_cast<float>(std::cos(0.5 * pi * c));
    out[2] = static_cast<float>(std::sin(pi * c));
    out[3] = static_cast<float>(std::cos(pi * c));
}

/// Rows of x scaled by `scale`, followed by the sigma features.
inline Matrix with_sigma_features(const Matrix& x, double sigma, double scale) {
    const std::size_t n = x.rows(), d = x.cols(), w = d + kSigmaFeatures;
    Matrix out = Matrix::matrix(n, w);
    float feat[kSigmaFeatures];
    sigma_features(sigma, feat);
    const float s = static_cast<float>(scale);
    for (std::size_t r = 0; r < n; ++r) {
        float* dst = out.data() + r * w;
        const float* src = x.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] * s;
        for (std::size_t c = 0; c < kSigmaFeatures; ++c) dst[d + c] = feat[c];
    }
    return out;
}

/// Per-coordinate z-scoring fitted on a data matrix.
struct Standardizer {
    std::vector<float> mean;
    std::vector<float> std;

    static Standardizer identity(std::size_t dim) { return {std::vector<float>(dim, 0.f), std::vector<float>(dim, 1.f)}; }

    static Standardizer fit(const Matrix& data) {
        detail::require(data.rows() > 0, "standardizer: empty data");
        const std::size_t n = data.rows(), d = data.cols();
        Standardizer s{std::vector<float>(d), std::vector<float>(d)};
        for (std::size_t c = 0; c < d; ++c) {
            double m = 0, v = 0;
            for (std::size_t r = 0; r < n; ++r) m += data(r, c);
            m /= static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r) v += (data(r, c) - m) * (data(r, c) - m);
            v /= static_cast<double>(n);
            s.mean[c] = static_cast<float>(m);
            s.std[c] = static_cast<float>(std::max(std::sqrt(v), 1e-3));
        }
        return s;
    }

    std::size_t dim() const { return mean.size(); }

    Matrix apply(const Matrix& x) const {
        check(x);
        Matrix out = x;
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < dim(); ++c) out(r, c) = (x(r, c) - mean[c]) / std[c];
        return out;
    }

    Matrix invert(const Matrix& z) const {
        check(z);
        Matrix out = z;
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t c = 0; c < dim(); ++c) out(r, c) = z(r, c) * std[c] + mean[c];
        return out;
    }

    void save(Checkpoint& ck, const std::string& prefix) const {
        ck.put(prefix + ".mean", Shape{dim()}, mean);
        ck.put(prefix + ".std", Shape{dim()}, std);
    }

    static Standardizer load(const Checkpoint& ck, const std::string& prefix) {
        return {ck.get(prefix + ".mean").values(), ck.get(prefix + ".std").values()};
    }

private:
    void check(const Matrix& x) const {
        if (x.cols() != dim())
            throw ValidationError("standardizer: data has " + std::to_string(x.cols()) + " columns, expected " +
                                  std::to_string(dim()));
    }
};

struct DenoiserConfig {
    std::size_t hidden = 256;
    std::size_t depth = 4;
    bool residual = true;
};

/// Sigma-conditioned MLP F wrapped into a clean-sample estimate
///
///   D(x; sigma) = c_skip x + c_out F(c_in x, features(sigma))
///
/// with c_skip = 1/(sigma^2+1), c_out = sigma/sqrt(sigma^2+1) and
/// c_in = 1/sqrt(sigma^2+1), i.e. unit data scale. Data is assumed standardized.
class Denoiser {
public:
    Denoiser() = default;

    Denoiser(std::size_t data_dim, const DenoiserConfig& cfg) : dim_(data_dim) {
        detail::require(data_dim > 0, "denoiser: data dimension must be positive");
        detail::require(cfg.depth >= 1 && cfg.hidden >= 1, "denoiser: depth and hidden width must be positive");
        std::vector<std::size_t> widths{data_dim + kSigmaFeatures};
        for (std::size_t i = 0; i < cfg.depth; ++i) widths.push_back(cfg.hidden);
        widths.push_back(data_dim);
        net_ = Mlp<float>(widths, cfg.residual);
    }

    explicit Denoiser(Mlp<float> net) : dim_(net.output_width()), net_(std::move(net)) {
        detail::require(net_.input_width() == dim_ + kSigmaFeatures, "denoiser: network widths inconsistent");
    }

    static double c_in(double sigma) { return 1.0 / std::sqrt(sigma * sigma + 1.0); }
    static double c_skip(double sigma) { return 1.0 / (sigma * sigma + 1.0); }
    static double c_out(double sigma) { return sigma / std::sqrt(sigma * sigma + 1.0); }

    void init(Rng& rng) { net_.init(rng); }

    std::size_t dim() const noexcept { return dim_; }
    Mlp<float>& net() noexcept { return net_; }
    const Mlp<float>& net() const noexcept { return net_; }

    Matrix operator()(const Matrix& x, double sigma) const {
        check(x);
        return combine(x, mlp_forward(net_, with_sigma_features(x, sigma, c_in(sigma))), sigma);
    }

    /// Network trace; trace.output holds F, not D.
    MlpTrace<float> trace(const Matrix& x, double sigma) const {
        check(x);
        return mlp_trace(net_, with_sigma_features(x, sigma, c_in(sigma)));
    }

    static Matrix combine(const Matrix& x, Matrix f, double sigma) {
        const float skip = static_cast<float>(c_skip(sigma)), out = static_cast<float>(c_out(sigma));
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = skip * x[i] + out * f[i];
        return f;
    }

    void save(Checkpoint& ck, const std::string& prefix = "denoiser") const { ck.put_mlp(prefix, net_); }

    static Denoiser load(const Checkpoint& ck, const std::string& prefix = "denoiser") {
        return Denoiser(ck.get_mlp(prefix));
    }

private:
    void check(const Matrix& x) const {
        if (x.cols() != dim_)
            throw ValidationError("denoiser: input has " + std::to_string(x.cols()) + " columns, data dimension is " +
                                  std::to_string(dim_));
    }

    std::size_t dim_ = 0;
    Mlp<float> net_;
};

struct LossAndGrads {
    double loss = 0.0;
    std::vector<Matrix> grads;
};

/// Gaussian noise with standard deviation sigma, drawn row by row.
inline Matrix gaussian_noise(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
    Matrix e = Matrix::matrix(rows, cols);
    for (auto& v : e.values()) v = static_cast<float>(sigma * rng.normal());
    return e;
}

namespace detail {

inline void check_loss_batch(const Matrix& residual, double loss) {
    if (std::isfinite(loss)) return;
    for (std::size_t r = 0; r < residual.rows(); ++r)
        for (std::size_t c = 0; c < residual.cols(); ++c)
            if (!std::isfinite(residual(r, c)))
                throw NumericError("denoise_loss: non-finite loss at batch index " + std::to_string(r));
    throw NumericError("denoise_loss: non-finite loss");
}

}  // namespace detail

/// Mean over the batch of ||D(x + eps; sigma) - x||^2 for an explicit noise draw.
template <DenoiserLike D>
double denoise_loss_value(const D& d, const Matrix& clean, double sigma, const Matrix& noise) {
    detail::require(clean.rows() > 0, "denoise_loss: empty batch");
    detail::require(sigma > 0, "denoise_loss: sigma must be positive");
    detail::require(noise.shape() == clean.shape(), "denoise_loss: noise shape mismatch");
    Matrix noised = clean;
    for (std::size_t i = 0; i < noised.size(); ++i) noised[i] += noise[i];
    Matrix out = d(noised, sigma);
    Matrix res = clean;
    double loss = 0.0;
    for (std::size_t i = 0; i < res.size(); ++i) {
        res[i] = out[i] - clean[i];
        loss += static_cast<double>(res[i]) * res[i];
    }
    loss /= static_cast<double>(clean.rows());
    detail::check_loss_batch(res, loss);
    return loss;
}

/// Denoising loss and its parameter gradients for an explicit noise draw.
inline LossAndGrads denoise_loss(const Denoiser& d, const Matrix& clean, double sigma, const Matrix& noise) {
    detail::require(clean.rows() > 0, "denoise_loss: empty batch");
    detail::require(sigma > 0, "denoise_loss: sigma must be positive");
    detail::require(noise.shape() == clean.shape(), "denoise_loss: noise shape mismatch");
    Matrix noised = clean;
    for (std::size_t i = 0; i < noised.size(); ++i) noised[i] += noise[i];
    auto tr = d.trace(noised, sigma);
    const Matrix out = Denoiser::combine(noised, tr.output, sigma);
    const double inv_n = 1.0 / static_cast<double>(clean.rows());
    const double c_out = Denoiser::c_out(sigma);
    Matrix res = clean, up = clean;
    double loss = 0.0;
    for (std::size_t i = 0; i < res.size(); ++i) {
        res[i] = out[i] - clean[i];
        loss += static_cast<double>(res[i]) * res[i];
        up[i] = static_cast<float>(2.0 * inv_n * c_out * res[i]);
    }
    loss *= inv_n;
    detail::check_loss_batch(res, loss);
    return {loss, mlp_backward(d.net(), tr, up).params};
}

inline LossAndGrads denoise_loss(const Denoiser& d, const Matrix& clean, double sigma, Rng& rng) {
    return denoise_loss(d, clean, sigma, gaussian_noise(clean.rows(), clean.cols(), sigma, rng));
}

/// Score estimate (D(x; sigma) - x) / sigma^2.
template <DenoiserLike D>
Matrix score_from_denoiser(const D& d, const Matrix& x, double sigma) {
    if (!(sigma > 0)) throw ValidationError("score_from_denoiser: score is undefined at sigma = 0");
    Matrix s = d(x, sigma);
    const float inv = static_cast<float>(1.0 / (sigma * sigma));
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (s[i] - x[i]) * inv;
    return s;
}

struct DenoiserTrainConfig {
    DenoiserConfig net;
    std::size_t iterations = 4000;
    std::size_t batch_size = 256;
    double lr = 3e-4;
    bool cosine = true;
    /// Independent noise levels per Adam step; the batch is split evenly.
    std::size_t sigma_groups = 8;
    std::uint64_t seed = 0;
};

struct TrainedDenoiser {
    Denoiser denoiser;
    std::vector<double> loss_trace;
};

/// Minibatch Adam on the denoising loss. Sigma is drawn uniformly over the
/// ladder indices 0..T-1 for every group of the batch; each group's gradient
/// is weighted by 1/c_out(sigma)^2. The trace records the unweighted loss.
inline TrainedDenoiser train_denoiser(const Matrix& data, const NoiseSchedule& sched, const DenoiserTrainConfig& cfg,
                                      const Denoiser* warm_start = nullptr) {
    detail::require(data.rows() > 0, "train_denoiser: empty dataset");
    detail::require(cfg.batch_size > 0 && cfg.sigma_groups > 0, "train_denoiser: batch size and groups must be positive");
    sched.validate();
    Rng rng(cfg.seed, "denoiser-train");
    TrainedDenoiser out;
    if (warm_start) {
        if (warm_start->dim() != data.cols())
            throw ValidationError("train_denoiser: dataset has " + std::to_string(data.cols()) +
                                  " columns, denoiser expects " + std::to_string(warm_start->dim()));
        out.denoiser = *warm_start;
    } else {
        out.denoiser = Denoiser(data.cols(), cfg.net);
        out.denoiser.init(rng);
    }
    Denoiser& d = out.denoiser;
    auto params = d.net().parameters();
    AdamState<float> adam(params, cfg.lr);
    const auto ladder = karras_ladder(sched);
    const std::size_t groups = std::min(cfg.sigma_groups, cfg.batch_size);
    const std::size_t per_group = cfg.batch_size / groups;
    const std::size_t dim = data.cols();
    out.loss_trace.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        if (cfg.cosine) adam.lr = cosine_lr(cfg.lr, it, cfg.iterations, 0.05);
        std::vector<Matrix> grads;
        double loss = 0.0;
        for (std::size_t g = 0; g < groups; ++g) {
            Matrix batch = Matrix::matrix(per_group, dim);
            for (std::size_t r = 0; r < per_group; ++r) {
                const std::size_t src = rng.index(data.rows());
                std::copy_n(data.data() + src * dim, dim, batch.data() + r * dim);
            }
            const double sigma = ladder[rng.index(sched.steps)];
            LossAndGrads lg = denoise_loss(d, batch, sigma, rng);
            loss += lg.loss / static_cast<double>(groups);
            // 1/c_out^2 puts every noise level on the same footing for F
            const float w = static_cast<float>(1.0 / (Denoiser::c_out(sigma) * Denoiser::c_out(sigma) * groups));
            if (grads.empty()) {
                grads = std::move(lg.grads);
                for (auto& gp : grads)
                    for (auto& v : gp.values()) v *= w;
            } else {
                for (std::size_t p = 0; p < grads.size(); ++p)
                    for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += w * lg.grads[p][i];
            }
        }
        adam_step(params, grads, adam);
        out.loss_trace.push_back(loss);
    }
    return out;
}

}  // namespace edis
