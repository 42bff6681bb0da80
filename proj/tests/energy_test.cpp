#include <gtest/gtest.h>

#include <edis/energy.hpp>

#include <numeric>

#include "test_support.hpp"

using namespace edis;

namespace {

// Posterior mean for unit-variance Gaussian data in every coordinate.
struct GaussianDenoiser {
    Matrix operator()(const Matrix& x, double sigma) const {
        Matrix y = x;
        for (auto& v : y.values()) v = static_cast<float>(v / (1.0 + sigma * sigma));
        return y;
    }
};

// s ~ N(0, 1) and a uniform over the four one-hots: the posterior mean of the
// action part is softmax(y / sigma^2).
struct OneHotDenoiser {
    Matrix operator()(const Matrix& x, double sigma) const {
        Matrix y = x;
        const double s2 = sigma * sigma;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            y(r, 0) = static_cast<float>(x(r, 0) / (1.0 + s2));
            double top = -INFINITY, z = 0.0, w[4];
            for (std::size_t k = 0; k < 4; ++k) top = std::max(top, x(r, 1 + k) / s2);
            for (std::size_t k = 0; k < 4; ++k) z += w[k] = std::exp(x(r, 1 + k) / s2 - top);
            for (std::size_t k = 0; k < 4; ++k) y(r, 1 + k) = static_cast<float>(w[k] / z);
        }
        return y;
    }
};

struct ConstantDenoiser {
    std::vector<float> point;
    Matrix operator()(const Matrix& x, double) const {
        Matrix y = x;
        for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) = point[c];
        return y;
    }
};

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Energies of the d^pi = N(-1, 1) positives against p_theta = N(0, 1).
const EnergySet& shifted_energy() {
    static const EnergySet e = [] {
        Rng rng(1, "positives");
        Matrix pos = Matrix::matrix(1000, 1);
        for (auto& v : pos.values()) v = static_cast<float>(rng.normal() - 1.0);
        EnergyData data;
        data.recent = pos;
        EnergyTrainConfig cfg;
        cfg.hidden = 64;
        cfg.iterations = 1600;
        cfg.updates_per_pass = 16;
        cfg.seed = 1;
        return train_energies(GaussianDenoiser{}, TupleLayout{1, 0, 0}, data, cfg, NoiseSchedule{}).energies;
    }();
    return e;
}

// E = c F(c x, features(sigma)) evaluated in double on the cast network.
double energy_double(const EnergyNet& e, const std::vector<double>& x, double sigma) {
    const Mlp<double> net = e.net().cast<double>();
    const double c = EnergyNet::scale(sigma);
    float feat[kSigmaFeatures];
    sigma_features(sigma, feat);
    Tensor<double> in = Tensor<double>::matrix(1, e.input_dim() + kSigmaFeatures);
    for (std::size_t i = 0; i < e.input_dim(); ++i) in(0, i) = c * x[i];
    for (std::size_t i = 0; i < kSigmaFeatures; ++i) in(0, e.input_dim() + i) = feat[i];
    return c * mlp_forward(net, in)[0];
}

EnergySet random_energies(const TupleLayout& l, Rng& rng) {
    EnergySet s;
    s.layout = l;
    for (EnergyRole r : kRoles) {
        if (!role_active(l, r)) continue;
        EnergyNet net(r, input_width(l, r), 12, 2);
        net.init(rng);
        for (auto* p : net.net().parameters())
            for (auto& v : p->values()) v += static_cast<float>(0.1 * rng.normal());
        s.nets[static_cast<int>(r)] = std::move(net);
    }
    return s;
}

}  // namespace

TEST(InfoNce, EqualEnergiesGiveLogTwo) {
    const auto r = infonce_loss({0.0}, Tensor<double>({1, 1}, {0.0}));
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
}

TEST(InfoNce, PerfectDiscrimination) {
    const auto r = infonce_loss({-30.0}, Tensor<double>({1, 3}, {0.0, 0.0, 0.0}));
    EXPECT_LT(r.loss, 1e-10);
}

TEST(InfoNce, ClosedFormLogFourThirds) {
    const auto r = infonce_loss({0.0}, Tensor<double>({1, 1}, {std::log(3.0)}));
    EXPECT_NEAR(r.loss, std::log(4.0 / 3.0), 1e-12);
}

TEST(InfoNce, LargeEnergiesStayFinite) {
    const auto r = infonce_loss({1000.0}, Tensor<double>({1, 2}, {-1000.0, 500.0}));
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_NEAR(r.loss, 2000.0, 1e-9);
}

TEST(InfoNce, ShiftInvariant) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> pos(4);
        Tensor<double> neg = Tensor<double>::matrix(4, 10);
        for (auto& v : pos) v = 3.0 * rng.normal();
        for (auto& v : neg.values()) v = 3.0 * rng.normal();
        const double shift = 20.0 * rng.normal();
        auto pos2 = pos;
        auto neg2 = neg;
        for (auto& v : pos2) v += shift;
        for (auto& v : neg2.values()) v += shift;
        EXPECT_NEAR(infonce_loss(pos, neg).loss, infonce_loss(pos2, neg2).loss, 1e-5);
    }
}

TEST(InfoNce, GradientsMatchFiniteDifferences) {
    Rng rng(3);
    std::vector<double> pos{0.3, -1.2};
    Tensor<double> neg = Tensor<double>::matrix(2, 3);
    for (auto& v : neg.values()) v = rng.normal();
    const auto r = infonce_loss(pos, neg);
    const double h = 1e-6;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        auto p = pos, m = pos;
        p[i] += h;
        m[i] -= h;
        EXPECT_NEAR(r.d_pos[i], (infonce_loss(p, neg).loss - infonce_loss(m, neg).loss) / (2 * h), 1e-7);
    }
    for (std::size_t i = 0; i < neg.size(); ++i) {
        auto p = neg, m = neg;
        p[i] += h;
        m[i] -= h;
        EXPECT_NEAR(r.d_neg[i], (infonce_loss(pos, p).loss - infonce_loss(pos, m).loss) / (2 * h), 1e-7);
    }
}

TEST(InfoNce, RejectsBadInput) {
    EXPECT_THROW(infonce_loss({}, Tensor<double>::matrix(0, 1)), ValidationError);
    EXPECT_THROW(infonce_loss({0.0}, Tensor<double>::matrix(2, 1)), ValidationError);
    EXPECT_THROW(infonce_loss({NAN}, Tensor<double>::matrix(1, 1)), NumericError);
    EXPECT_THROW(infonce_loss({0.0}, Tensor<double>({1, 1}, {INFINITY})), NumericError);
}

TEST(TimeTPositives, ZeroSigmaLeavesInput) {
    NoiseSchedule s;
    s.sigma_min = 0.0;  // only the last rung reads sigma_min directly
    Rng rng(4);
    const Matrix clean = Matrix::row({1.f, -2.f, 3.f});
    EXPECT_TRUE(make_time_t_positives(clean, s.steps - 1, s, rng) == clean);
}

TEST(TimeTPositives, UnitSigmaIsTheSeededDraw) {
    NoiseSchedule s;
    s.sigma_max = 1.0;
    s.sigma_min = 0.01;
    Rng a(5), b(5);
    const Matrix out = make_time_t_positives(Matrix::row({0.f, 0.f}), 0, s, a);
    EXPECT_EQ(out[0], static_cast<float>(b.normal()));
    EXPECT_EQ(out[1], static_cast<float>(b.normal()));
}

TEST(TimeTPositives, VarianceMatchesSigma) {
    NoiseSchedule s;
    const std::size_t t = 60;
    const double sigma = karras_sigma(s, t);
    Rng rng(6);
    const Matrix out = make_time_t_positives(Matrix::matrix(100000, 1), t, s, rng);
    double m = 0, v = 0;
    for (float x : out.values()) m += x;
    m /= 1e5;
    for (float x : out.values()) v += (x - m) * (x - m);
    v /= 1e5 - 1;
    EXPECT_NEAR(v / (sigma * sigma), 1.0, 0.05);
    EXPECT_THROW(make_time_t_positives(out, s.steps, s, rng), ValidationError);
}

TEST(Negatives, StepZeroIsPureNoiseOnFreeCoordinates) {
    const TupleLayout l{2, 1, 0};
    NoiseSchedule s;
    const Matrix neg = sample_negatives(GaussianDenoiser{}, l, EnergyRole::state, Matrix{}, 5, 0, 3, s, 77);
    ASSERT_EQ(neg.shape(), (Shape{15, 2}));
    for (std::size_t r = 0; r < 15; ++r) {
        Rng stream(77, "sample", r);
        EXPECT_EQ(neg(r, 0), static_cast<float>(s.sigma_max * stream.normal()));
        EXPECT_EQ(neg(r, 1), static_cast<float>(s.sigma_max * stream.normal()));
    }
}

TEST(Negatives, PointMassDenoiserGivesNegativesNearThePoint) {
    const TupleLayout l{2, 0, 0};
    NoiseSchedule s;
    const std::size_t t = s.steps - 1;
    const Matrix neg =
        sample_negatives(ConstantDenoiser{{0.5f, -1.f}}, l, EnergyRole::state, Matrix{}, 20, t, 10, s, 8);
    const double bound = 3.0 * karras_sigma(s, t) + 0.1;
    for (std::size_t r = 0; r < neg.rows(); ++r) EXPECT_LT(std::hypot(neg(r, 0) - 0.5, neg(r, 1) + 1.0), bound);
}

TEST(Negatives, ConditioningIsHeldForEachGroup) {
    const TupleLayout l{1, 1, 1};
    NoiseSchedule s;
    const Matrix cond({2, 2}, {0.25f, -0.5f, 1.5f, 0.75f});
    // the stub pulls everything to the origin, so only the mask can keep the prefix
    const ConstantDenoiser zero{{0.f, 0.f, 0.f}};
    const auto ladder = sample_negative_ladder(zero, l, EnergyRole::next_state, cond, 2, 4, s, 9);
    ASSERT_EQ(ladder.size(), s.steps);
    EXPECT_EQ(ladder.back().shape(), (Shape{8, 1}));
    const Matrix neg = sample_negatives(zero, l, EnergyRole::next_state, cond, 2, s.steps - 1, 4, s, 9);
    EXPECT_TRUE(neg == ladder.back());
    EXPECT_THROW(sample_negatives(zero, l, EnergyRole::next_state, cond, 3, 5, 4, s, 9), ValidationError);
}

TEST(PositiveBuffer, KeepsTheMostRecent) {
    PositiveBuffer<int> b(3);
    for (int i = 0; i < 7; ++i) b.push(i);
    EXPECT_EQ(std::vector<int>(b.begin(), b.end()), (std::vector<int>{4, 5, 6}));
    EXPECT_THROW(PositiveBuffer<int>(0), ValidationError);
}

TEST(Guidance, ConstantNetsGiveZero) {
    const TupleLayout l{2, 4, 2};
    Rng rng(10);
    EnergySet s = random_energies(l, rng);
    for (EnergyRole r : kRoles) {
        Mlp<float>& net = s.get(r)->net();
        net.weight(net.num_layers() - 1).fill(0.f);
        net.bias(net.num_layers() - 1)[0] = 3.f;
    }
    Matrix x = Matrix::matrix(5, l.dim());
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());
    const Matrix g = guidance_gradient(s, x, 0.5);
    for (float v : g.values()) EXPECT_EQ(v, 0.f);
}

TEST(Guidance, LinearStateEnergy) {
    const TupleLayout l{2, 4, 2};
    EnergySet s;
    s.layout = l;
    Mlp<float> lin({2 + kSigmaFeatures, 1}, false);
    lin.weight(0)(0, 0) = 0.75f;
    lin.weight(0)(1, 0) = -2.f;
    s.nets[0] = EnergyNet(EnergyRole::state, lin);
    Matrix x = Matrix::matrix(3, l.dim(), 0.4f);
    // E = c F(c x): the slope picks up c^2, which is 1 to within 4e-6 at sigma_min
    for (double sigma : {0.002, 1.0}) {
        const double c2 = 1.0 / (1.0 + sigma * sigma);
        const Matrix g = guidance_gradient(s, x, sigma);
        for (std::size_t r = 0; r < 3; ++r) {
            EXPECT_NEAR(g(r, 0), 0.75 * c2, 1e-6);
            EXPECT_NEAR(g(r, 1), -2.0 * c2, 1e-6);
            for (std::size_t c = 2; c < l.dim(); ++c) EXPECT_EQ(g(r, c), 0.f);
        }
    }
}

TEST(Guidance, MatchesFiniteDifferencesForEveryRole) {
    const TupleLayout l{2, 3, 2};
    Rng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const EnergySet s = random_energies(l, rng);
        const double sigma = std::exp(-4.0 + 6.0 * rng.uniform());
        Matrix x = Matrix::matrix(1, l.dim());
        for (auto& v : x.values()) v = static_cast<float>(rng.normal());
        const Matrix g = guidance_gradient(s, x, sigma);
        for (EnergyRole role : kRoles) {
            // each role on its own, so a wrong slice shows up per role
            GuidanceOptions only;
            only.use = {role == EnergyRole::state, role == EnergyRole::action, role == EnergyRole::next_state};
            const Matrix gr = guidance_gradient(s, x, sigma, only);
            const EnergyNet& e = *s.get(role);
            std::vector<double> fd(l.dim(), 0.0), an(gr.values().begin(), gr.values().end());
            std::vector<double> xd(x.values().begin(), x.values().end());
            const double h = 1e-5;
            for (std::size_t i = 0; i < e.input_dim(); ++i) {
                auto p = xd, m = xd;
                p[i] += h;
                m[i] -= h;
                fd[i] = (energy_double(e, p, sigma) - energy_double(e, m, sigma)) / (2 * h);
            }
            worst = std::max(worst, test::rel_error(an, fd));
        }
        Matrix sum = Matrix::matrix(1, l.dim());
        for (EnergyRole role : kRoles) {
            GuidanceOptions only;
            only.use = {role == EnergyRole::state, role == EnergyRole::action, role == EnergyRole::next_state};
            const Matrix gr = guidance_gradient(s, x, sigma, only);
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += gr[i];
        }
        for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR(sum[i], g[i], 1e-5);
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(Guidance, FreeSliceOnlyStopsConditioningGradients) {
    const TupleLayout l{2, 3, 2};
    Rng rng(12);
    const EnergySet s = random_energies(l, rng);
    Matrix x = Matrix::matrix(2, l.dim());
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());
    GuidanceOptions opt;
    opt.use = {false, false, true};
    opt.free_slice_only = true;
    const Matrix g = guidance_gradient(s, x, 0.3, opt);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(g(r, c), 0.f);
        EXPECT_NE(g(r, 5), 0.f);
    }
}

TEST(Guidance, RejectsZeroSigmaAndWrongWidth) {
    const TupleLayout l{2, 0, 0};
    Rng rng(13);
    const EnergySet s = random_energies(l, rng);
    EXPECT_THROW(guidance_gradient(s, Matrix::matrix(1, 2), 0.0), ValidationError);
    EXPECT_THROW(guidance_gradient(s, Matrix::matrix(1, 3), 1.0), ValidationError);
}

TEST(EnergyTraining, IndistinguishableClassesStayAtChance) {
    Rng rng(14);
    Matrix pos = Matrix::matrix(1000, 1);
    for (auto& v : pos.values()) v = static_cast<float>(rng.normal());
    EnergyData data;
    data.recent = pos;
    EnergyTrainConfig cfg;
    cfg.hidden = 32;
    cfg.iterations = 400;
    cfg.seed = 2;
    const auto out = train_energies(GaussianDenoiser{}, TupleLayout{1, 0, 0}, data, cfg, NoiseSchedule{});
    const auto& trace = out.loss_trace[0];
    ASSERT_EQ(trace.size(), cfg.iterations);
    double tail = 0.0;
    for (std::size_t i = trace.size() - 100; i < trace.size(); ++i) tail += trace[i];
    tail /= 100.0;
    EXPECT_NEAR(tail / std::log(1.0 + static_cast<double>(cfg.k_neg)), 1.0, 0.1);
}

TEST(EnergyTraining, RecoversTheDensityRatio) {
    const EnergyNet& e = *shifted_energy().get(EnergyRole::state);
    Matrix grid = Matrix::matrix(121, 1);
    std::vector<double> log_ratio, neg_e;
    for (std::size_t i = 0; i < grid.rows(); ++i) {
        const double x = -3.0 + 5.0 * static_cast<double>(i) / 120.0;
        grid[i] = static_cast<float>(x);
        log_ratio.push_back(-x - 0.5);  // log N(x; -1, 1) - log N(x; 0, 1)
    }
    for (float v : e.energy(grid, NoiseSchedule{}.sigma_min)) neg_e.push_back(-v);
    EXPECT_GT(pearson(neg_e, log_ratio), 0.95);
}

TEST(EnergyTraining, GuidedSamplesFollowTheShift) {
    const GuidanceFn g = make_guidance(shifted_energy());
    SamplerConfig cfg;
    cfg.seed = 15;
    const Matrix x = reverse_sde_sample(GaussianDenoiser{}, &g, NoiseSchedule{}, cfg, 2000, 1);
    double m = 0.0;
    for (float v : x.values()) m += v;
    EXPECT_NEAR(m / 2000.0, -1.0, 0.2);
}

// Maze actions are one-hots, so the action space here is the four one-hots and
// p_theta pairs s ~ N(0, 1) with a uniform action. A continuous action space would
// probe the energy off the data support, where a ReLU net only extrapolates.
TEST(EnergyTraining, ActionEnergyIsLowestAtThePolicyAction) {
    const TupleLayout l{1, 4, 0};
    Rng rng(16);
    Matrix tuples = Matrix::matrix(1000, 5);
    for (std::size_t r = 0; r < tuples.rows(); ++r) {
        tuples(r, 0) = static_cast<float>(rng.normal());
        tuples(r, 1 + rng.index(4)) = 1.f;
    }
    EnergyData data;
    data.recent = tuples;
    data.online = tuples;
    data.policy = [](const Matrix& s) {
        Matrix a = Matrix::matrix(s.rows(), 4);
        for (std::size_t r = 0; r < s.rows(); ++r) a(r, 2) = 1.f;
        return a;
    };
    EnergyTrainConfig cfg;
    cfg.hidden = 64;
    cfg.iterations = 400;
    cfg.seed = 3;
    const auto out = train_energies(OneHotDenoiser{}, l, data, cfg, NoiseSchedule{});
    const EnergyNet& e2 = *out.energies.get(EnergyRole::action);
    const double sigma = NoiseSchedule{}.sigma_min;
    std::size_t good = 0;
    const std::size_t probes = 100;
    for (std::size_t p = 0; p < probes; ++p) {
        Matrix x = Matrix::matrix(51, 5);
        const float s = static_cast<float>(rng.normal());
        for (std::size_t r = 0; r < 51; ++r) {
            x(r, 0) = s;
            std::size_t k = 2;
            if (r > 0) {
                do k = rng.index(4);
                while (k == 2);
            }
            x(r, 1 + k) = 1.f;
        }
        const auto en = e2.energy(x, sigma);
        good += *std::min_element(en.begin() + 1, en.end()) > en[0];
    }
    EXPECT_GE(good, 95u);
}

TEST(EnergyTraining, EmptyPositiveBufferRejected) {
    EnergyData data;
    EXPECT_THROW(train_energies(GaussianDenoiser{}, TupleLayout{1, 0, 0}, data, EnergyTrainConfig{}, NoiseSchedule{}),
                 ValidationError);
}

TEST(EnergyTraining, ActionRoleNeedsPolicy) {
    EnergyData data;
    data.recent = Matrix::matrix(10, 3);
    EXPECT_THROW(train_energies(GaussianDenoiser{}, TupleLayout{1, 2, 0}, data, EnergyTrainConfig{}, NoiseSchedule{}),
                 ValidationError);
}

TEST(EnergySet, CheckpointRoundTrip) {
    const TupleLayout l{2, 4, 2};
    Rng rng(17);
    const EnergySet s = random_energies(l, rng);
    Checkpoint ck;
    s.save(ck);
    const EnergySet back = EnergySet::load(ck);
    Matrix x = Matrix::matrix(4, l.dim());
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());
    EXPECT_TRUE(guidance_gradient(s, x, 0.7) == guidance_gradient(back, x, 0.7));
}
