#include <gtest/gtest.h>

#include <edis/denoiser.hpp>
#include <edis/sampler.hpp>

#include <functional>

#include "test_support.hpp"

using namespace edis;

namespace {

struct StubDenoiser {
    std::function<Matrix(const Matrix&, double)> f;
    Matrix operator()(const Matrix& x, double sigma) const { return f(x, sigma); }
};

// Exact posterior mean for unit-variance Gaussian data.
const StubDenoiser kGaussian{[](const Matrix& x, double sigma) {
    Matrix y = x;
    for (auto& v : y.values()) v = static_cast<float>(v / (1.0 + sigma * sigma));
    return y;
}};

const StubDenoiser kPointMass{[](const Matrix& x, double) { return Matrix::matrix(x.rows(), x.cols()); }};

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

Moments column_moments(const Matrix& m, std::size_t c) {
    Moments out;
    for (std::size_t r = 0; r < m.rows(); ++r) out.mean += m(r, c);
    out.mean /= static_cast<double>(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out.var += (m(r, c) - out.mean) * (m(r, c) - out.mean);
    out.var /= static_cast<double>(m.rows() - 1);
    return out;
}

Matrix gaussian_data(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m = Matrix::matrix(n, dim);
    for (auto& v : m.values()) v = static_cast<float>(rng.normal());
    return m;
}

}  // namespace

TEST(KarrasSchedule, Endpoints) {
    NoiseSchedule s;
    EXPECT_DOUBLE_EQ(karras_sigma(s, 0), 80.0);
    EXPECT_DOUBLE_EQ(karras_sigma(s, s.steps - 1), 0.002);
    EXPECT_DOUBLE_EQ(karras_sigma(s, s.steps), 0.0);
    EXPECT_THROW(karras_sigma(s, s.steps + 1), ValidationError);
    EXPECT_EQ(karras_ladder(s).size(), s.steps + 1);
}

TEST(KarrasSchedule, StrictlyDecreasingForRandomConfigs) {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        NoiseSchedule s;
        s.sigma_min = std::exp(-8.0 + 6.0 * rng.uniform());
        s.sigma_max = s.sigma_min * (1.5 + 1000.0 * rng.uniform());
        s.rho = 0.5 + 10.0 * rng.uniform();
        s.steps = 2 + rng.index(300);
        const auto l = karras_ladder(s);
        for (std::size_t t = 0; t + 1 < s.steps; ++t) ASSERT_GT(l[t], l[t + 1]) << "trial " << trial << " t " << t;
        EXPECT_EQ(l[s.steps], 0.0);
    }
}

TEST(KarrasSchedule, InvalidConfigsRejected) {
    NoiseSchedule s;
    s.sigma_min = 100.0;
    EXPECT_THROW(karras_ladder(s), ValidationError);
    s = {};
    s.steps = 1;
    EXPECT_THROW(karras_ladder(s), ValidationError);
}

TEST(DenoiseLoss, OracleDenoiserHasZeroLoss) {
    const Matrix clean = gaussian_data(8, 3, 1);
    Rng rng(2);
    const Matrix noise = gaussian_noise(8, 3, 0.5, rng);
    const StubDenoiser oracle{[&](const Matrix&, double) { return clean; }};
    EXPECT_EQ(denoise_loss_value(oracle, clean, 0.5, noise), 0.0);
}

TEST(DenoiseLoss, ZeroDenoiserOnUnitVector) {
    const Matrix clean = Matrix::row({1, 0});
    EXPECT_DOUBLE_EQ(denoise_loss_value(kPointMass, clean, 1.0, Matrix::matrix(1, 2)), 1.0);
}

TEST(DenoiseLoss, RejectsZeroSigmaAndShapeMismatch) {
    const Matrix clean = Matrix::row({1, 0});
    EXPECT_THROW(denoise_loss_value(kPointMass, clean, 0.0, Matrix::matrix(1, 2)), ValidationError);
    EXPECT_THROW(denoise_loss_value(kPointMass, clean, 1.0, Matrix::matrix(2, 2)), ValidationError);
}

TEST(DenoiseLoss, NonFiniteOutputReported) {
    const StubDenoiser bad{[](const Matrix& x, double) {
        Matrix y = x;
        y[1] = NAN;
        return y;
    }};
    EXPECT_THROW(denoise_loss_value(bad, Matrix::matrix(2, 2), 1.0, Matrix::matrix(2, 2)), NumericError);
}

// Independent double-precision evaluation of the wrapped network:
// D = c_skip x + c_out F(c_in x, features(sigma)).
TEST(DenoiseLoss, GradientsMatchDoubleFiniteDifferences) {
    Rng rng(3);
    Denoiser d(3, DenoiserConfig{16, 3, true});
    d.init(rng);
    const Matrix clean = gaussian_data(5, 3, 4);
    const double sigma = 0.7;
    const Matrix noise = gaussian_noise(5, 3, sigma, rng);
    const LossAndGrads lg = denoise_loss(d, clean, sigma, noise);

    float feat[kSigmaFeatures];
    sigma_features(sigma, feat);
    auto loss_of = [&](const Mlp<double>& net) {
        Tensor<double> in = Tensor<double>::matrix(5, 3 + kSigmaFeatures);
        for (std::size_t r = 0; r < 5; ++r) {
            for (std::size_t c = 0; c < 3; ++c)
                in(r, c) = static_cast<double>(static_cast<float>(clean(r, c) + noise(r, c)) *
                                               static_cast<float>(Denoiser::c_in(sigma)));
            for (std::size_t c = 0; c < kSigmaFeatures; ++c) in(r, 3 + c) = feat[c];
        }
        const Tensor<double> f = mlp_forward(net, in);
        double loss = 0.0;
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 3; ++c) {
                const double xn = static_cast<float>(clean(r, c) + noise(r, c));
                const double dv = Denoiser::c_skip(sigma) * xn + Denoiser::c_out(sigma) * f(r, c);
                loss += (dv - clean(r, c)) * (dv - clean(r, c));
            }
        return loss / 5.0;
    };
    Mlp<double> net = d.net().cast<double>();
    EXPECT_NEAR(loss_of(net), lg.loss, 1e-5 * std::max(1.0, lg.loss));
    std::vector<double> fd, an;
    auto params = net.parameters();
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k]->size(); ++i) {
            const double keep = (*params[k])[i];
            (*params[k])[i] = keep + h;
            const double up = loss_of(net);
            (*params[k])[i] = keep - h;
            const double dn = loss_of(net);
            (*params[k])[i] = keep;
            fd.push_back((up - dn) / (2 * h));
            an.push_back(lg.grads[k][i]);
        }
    EXPECT_LT(test::rel_error(an, fd), 1e-4);
}

TEST(Score, IdentityDenoiserGivesZero) {
    const StubDenoiser id{[](const Matrix& x, double) { return x; }};
    const Matrix s = score_from_denoiser(id, Matrix::row({0.3f, -2.f}), 0.8);
    for (float v : s.values()) EXPECT_EQ(v, 0.f);
}

TEST(Score, ConstantDenoiserFormula) {
    const StubDenoiser mu{[](const Matrix& x, double) {
        Matrix y = Matrix::matrix(x.rows(), 2);
        for (std::size_t r = 0; r < x.rows(); ++r) y(r, 0) = 1.f, y(r, 1) = -1.f;
        return y;
    }};
    const Matrix s = score_from_denoiser(mu, Matrix::row({1.5f, -1.f}), 1.0);
    EXPECT_FLOAT_EQ(s[0], -0.5f);
    EXPECT_FLOAT_EQ(s[1], 0.f);
}

TEST(Score, UndefinedAtZeroSigma) {
    EXPECT_THROW(score_from_denoiser(kGaussian, Matrix::row({1.f}), 0.0), ValidationError);
}

TEST(Sampler, PointMassCollapsesToOrigin) {
    SamplerConfig cfg;
    cfg.seed = 5;
    const Matrix x = reverse_sde_sample(kPointMass, NoiseSchedule{}, cfg, 256, 2);
    double worst = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) worst = std::max<double>(worst, std::hypot(x(r, 0), x(r, 1)));
    EXPECT_LT(worst, 0.05);
}

TEST(Sampler, ExactGaussianDenoiserReproducesMoments) {
    SamplerConfig cfg;
    cfg.seed = 6;
    const Matrix x = reverse_sde_sample(kGaussian, NoiseSchedule{}, cfg, 4096, 2);
    for (std::size_t c = 0; c < 2; ++c) {
        const Moments m = column_moments(x, c);
        EXPECT_NEAR(m.mean, 0.0, 0.1);
        EXPECT_NEAR(m.var, 1.0, 0.15);
    }
}

// A linear energy E(x) = lambda x tilts N(0,1) into N(-lambda, 1); at noise level
// sigma the tilted marginal is N(-lambda, 1 + sigma^2), so the guidance is
// lambda / (1 + sigma^2).
class AnalyticTilt : public ::testing::TestWithParam<double> {};

TEST_P(AnalyticTilt, SampleMeanShiftsByLambda) {
    const double lambda = GetParam();
    const GuidanceFn g = [lambda](const Matrix& x, double sigma) {
        return Matrix(x.shape(), static_cast<float>(lambda / (1.0 + sigma * sigma)));
    };
    SamplerConfig cfg;
    cfg.seed = 7;
    const Matrix x = reverse_sde_sample(kGaussian, &g, NoiseSchedule{}, cfg, 4096, 1);
    const Moments m = column_moments(x, 0);
    EXPECT_NEAR(m.mean, -lambda, 0.15);
    EXPECT_NEAR(m.var, 1.0, 0.2);
}

INSTANTIATE_TEST_SUITE_P(Lambdas, AnalyticTilt, ::testing::Values(0.5, 1.0));

TEST(Sampler, ZeroGuidanceMatchesNoGuidance) {
    const GuidanceFn zero = [](const Matrix& x, double) { return Matrix(x.shape()); };
    for (double beta : {0.0, 0.3}) {
        SamplerConfig cfg;
        cfg.seed = 8;
        cfg.beta = beta;
        const Matrix a = reverse_sde_sample(kGaussian, nullptr, NoiseSchedule{}, cfg, 64, 3);
        const Matrix b = reverse_sde_sample(kGaussian, &zero, NoiseSchedule{}, cfg, 64, 3);
        EXPECT_TRUE(a == b) << "beta " << beta;
    }
}

TEST(Sampler, DeterministicAndIndependentOfChunking) {
    const GuidanceFn g = [](const Matrix& x, double sigma) {
        Matrix y = x;
        for (auto& v : y.values()) v = static_cast<float>(0.3 * v / (1.0 + sigma));
        return y;
    };
    SamplerConfig cfg;
    cfg.seed = 9;
    cfg.beta = 0.5;
    const Matrix ref = reverse_sde_sample(kGaussian, &g, NoiseSchedule{}, cfg, 50, 2);
    EXPECT_TRUE(ref == reverse_sde_sample(kGaussian, &g, NoiseSchedule{}, cfg, 50, 2));
    for (std::size_t chunk : {1, 7, 49}) {
        cfg.chunk = chunk;
        EXPECT_TRUE(ref == reverse_sde_sample(kGaussian, &g, NoiseSchedule{}, cfg, 50, 2)) << "chunk " << chunk;
    }
    cfg.seed = 10;
    EXPECT_FALSE(ref == reverse_sde_sample(kGaussian, &g, NoiseSchedule{}, cfg, 50, 2));
}

TEST(Sampler, MaskedCoordinatesEndAtTheirValues) {
    NoiseSchedule sched;
    const ConditionMask mask = ConditionMask::on_range(3, 1, 3, Matrix::row({0.f, 0.7f, -1.2f}));
    SamplerConfig cfg;
    cfg.seed = 11;
    cfg.beta = 0.2;
    const Matrix x = reverse_sde_sample(kGaussian, nullptr, sched, cfg, 128, 3, &mask);
    const double tol = 3.0 * karras_sigma(sched, sched.steps - 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        EXPECT_LT(std::abs(x(r, 1) - 0.7f), tol);
        EXPECT_LT(std::abs(x(r, 2) + 1.2f), tol);
    }
}

TEST(Sampler, PerRowMaskValues) {
    Matrix values = Matrix::matrix(4, 2);
    for (std::size_t r = 0; r < 4; ++r) values(r, 0) = static_cast<float>(r);
    const ConditionMask mask = ConditionMask::on_range(2, 0, 1, values);
    SamplerConfig cfg;
    const Matrix x = reverse_sde_sample(kGaussian, nullptr, NoiseSchedule{}, cfg, 4, 2, &mask);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(x(r, 0), static_cast<float>(r), 1e-5);
}

TEST(Sampler, BadMaskAndGuidanceShapeRejected) {
    SamplerConfig cfg;
    const ConditionMask short_mask = ConditionMask::on_range(2, 0, 1, Matrix::row({0.f, 0.f}));
    EXPECT_THROW(reverse_sde_sample(kGaussian, nullptr, NoiseSchedule{}, cfg, 4, 3, &short_mask), ValidationError);
    const ConditionMask nan_mask = ConditionMask::on_range(2, 0, 1, Matrix::row({NAN, 0.f}));
    EXPECT_THROW(reverse_sde_sample(kGaussian, nullptr, NoiseSchedule{}, cfg, 4, 2, &nan_mask), ValidationError);
    const GuidanceFn wrong = [](const Matrix& x, double) { return Matrix::matrix(x.rows(), x.cols() + 1); };
    EXPECT_THROW(reverse_sde_sample(kGaussian, &wrong, NoiseSchedule{}, cfg, 4, 2), ValidationError);
}

TEST(Sampler, NonFiniteStateIsNumericError) {
    const StubDenoiser blowup{[](const Matrix& x, double) { return Matrix(x.shape(), INFINITY); }};
    SamplerConfig cfg;
    EXPECT_THROW(reverse_sde_sample(blowup, NoiseSchedule{}, cfg, 2, 2), NumericError);
}

TEST(Sampler, StopStepReturnsIntermediateState) {
    NoiseSchedule sched;
    SamplerConfig cfg;
    cfg.seed = 12;
    IntegrationOptions opts;
    opts.stop_step = 1;
    std::size_t last = 0;
    opts.observer = [&](std::size_t step, const Matrix&, std::size_t) { last = step; };
    reverse_sde_sample(kPointMass, nullptr, sched, cfg, 3, 2, nullptr, opts);
    EXPECT_EQ(last, 1u);
}

// Trained networks, kept small so the suite stays quick.

namespace {

Denoiser train_small(const Matrix& data, std::size_t iterations, std::uint64_t seed) {
    DenoiserTrainConfig cfg;
    cfg.net = {64, 3, true};
    cfg.iterations = iterations;
    cfg.lr = 2e-3;
    cfg.batch_size = 128;
    cfg.seed = seed;
    return train_denoiser(data, NoiseSchedule{}, cfg).denoiser;
}

const Denoiser& gaussian_model() {
    static const Denoiser d = train_small(gaussian_data(20000, 2, 31), 1500, 3);
    return d;
}

}  // namespace

TEST(TrainedDenoiser, LossNearBayesOptimumAtUnitSigma) {
    const Matrix clean = gaussian_data(4000, 2, 40);
    Rng rng(41);
    const Matrix noise = gaussian_noise(4000, 2, 1.0, rng);
    const double trained = denoise_loss_value(gaussian_model(), clean, 1.0, noise);
    const double bayes = denoise_loss_value(kGaussian, clean, 1.0, noise);
    EXPECT_NEAR(bayes, 1.0, 0.1);  // two coordinates of posterior variance 1/2
    EXPECT_LT(trained, 1.1 * bayes);
}

TEST(TrainedDenoiser, ScoreMatchesAnalyticAtUnitSigma) {
    Matrix probes = Matrix::matrix(121, 2);
    for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 11; ++j) {
            probes(i * 11 + j, 0) = -2.f + 0.4f * static_cast<float>(i);
            probes(i * 11 + j, 1) = -2.f + 0.4f * static_cast<float>(j);
        }
    const Matrix s = score_from_denoiser(gaussian_model(), probes, 1.0);
    double mae = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) mae += std::abs(s[k] + 0.5 * probes[k]);
    EXPECT_LT(mae / static_cast<double>(s.size()), 0.1);
}

TEST(TrainedDenoiser, SamplesMatchTrainingMoments) {
    SamplerConfig cfg;
    cfg.seed = 13;
    const Matrix x = reverse_sde_sample(gaussian_model(), nullptr, NoiseSchedule{}, cfg, 4096);
    for (std::size_t c = 0; c < 2; ++c) {
        const Moments m = column_moments(x, c);
        EXPECT_NEAR(m.mean, 0.0, 0.1);
        EXPECT_NEAR(m.var, 1.0, 0.15);
    }
}

TEST(TrainedDenoiser, OnePointDatasetConcentrates) {
    const Matrix data = Matrix::row({0.5f, -0.25f});
    const Denoiser d = train_small(data, 1500, 4);
    SamplerConfig cfg;
    cfg.seed = 14;
    const Matrix x = reverse_sde_sample(d, nullptr, NoiseSchedule{}, cfg, 256);
    double worst = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) worst = std::max<double>(worst, std::hypot(x(r, 0) - 0.5, x(r, 1) + 0.25));
    EXPECT_LT(worst, 0.1);
}

TEST(TrainedDenoiser, TwoClustersKeepTheirWeights) {
    Rng rng(15);
    Matrix data = Matrix::matrix(4000, 2);
    for (std::size_t r = 0; r < data.rows(); ++r) {
        data(r, 0) = static_cast<float>((r % 2 ? 2.0 : -2.0) + 0.1 * rng.normal());
        data(r, 1) = static_cast<float>(0.1 * rng.normal());
    }
    const Denoiser d = train_small(data, 1500, 5);
    SamplerConfig cfg;
    cfg.seed = 16;
    const Matrix x = reverse_sde_sample(d, nullptr, NoiseSchedule{}, cfg, 2000);
    std::size_t right = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) right += x(r, 0) > 0;
    const double frac = static_cast<double>(right) / static_cast<double>(x.rows());
    EXPECT_GT(frac, 0.35);
    EXPECT_LT(frac, 0.65);
}

TEST(TrainedDenoiser, EmptyDatasetRejected) {
    EXPECT_THROW(train_denoiser(Matrix::matrix(0, 2), NoiseSchedule{}, DenoiserTrainConfig{}), ValidationError);
}

TEST(TrainedDenoiser, SameSeedSameWeights) {
    const Matrix data = gaussian_data(200, 2, 50);
    DenoiserTrainConfig cfg;
    cfg.net = {16, 2, true};
    cfg.iterations = 20;
    cfg.seed = 6;
    const auto a = train_denoiser(data, NoiseSchedule{}, cfg);
    const auto b = train_denoiser(data, NoiseSchedule{}, cfg);
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    auto pa = a.denoiser.net().parameters();
    auto pb = b.denoiser.net().parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_TRUE(*pa[k] == *pb[k]);
}

TEST(Standardizer, RoundTripsAndRejectsWidthMismatch) {
    const Matrix data = gaussian_data(50, 3, 60);
    const Standardizer s = Standardizer::fit(data);
    const Matrix back = s.invert(s.apply(data));
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(back[i], data[i], 1e-5);
    EXPECT_THROW(s.apply(Matrix::matrix(2, 2)), ValidationError);
}
