#include <edis/divergence.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace edis;

namespace {

const std::vector<std::string> kLayout = {
    "S..#....",
    ".#.#.##.",
    ".#...#..",
    ".###.#.#",
    "...#....",
    ".#.###.#",
    ".#...#..",
    "...#...E",
};

Matrix gaussian(std::size_t n, std::size_t dim, double mean, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m = Matrix::matrix(n, dim);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<float>(mean + rng.normal());
    return m;
}

/// JS(N(0,1), N(mu,1)) by trapezoid quadrature.
double gaussian_js(double mu) {
    auto pdf = [](double x, double m) { return std::exp(-0.5 * (x - m) * (x - m)) / std::sqrt(2 * std::numbers::pi); };
    const double lo = -12, hi = 12 + mu;
    const int n = 200000;
    const double h = (hi - lo) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + i * h, p = pdf(x, 0), q = pdf(x, mu), m = 0.5 * (p + q);
        const double f = 0.5 * p * std::log(p / m) + 0.5 * q * std::log(q / m);
        s += (i == 0 || i == n ? 0.5 : 1.0) * f;
    }
    return s * h;
}

Transition tuple(Cell s, Action a, Cell next) {
    Transition t;
    auto c = cell_center(s), n = cell_center(next);
    t.s = {c[0], c[1]};
    t.a = one_hot(a);
    t.s_next = {n[0], n[1]};
    return t;
}

using Bins = std::vector<double>;

}  // namespace

TEST(JsExact, ClosedForms) {
    EXPECT_DOUBLE_EQ(js_exact(Bins{0.2, 0.3, 0.5}, Bins{0.2, 0.3, 0.5}), 0.0);
    EXPECT_NEAR(js_exact(Bins{1, 0}, Bins{0, 1}), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(js_exact(Bins{0.5, 0.5}, Bins{0.9, 0.1}), 0.10174922507919675, 1e-12);
    EXPECT_NEAR(js_exact(Bins{1, 0, 0}, Bins{1.0 / 3, 1.0 / 3, 1.0 / 3}), 0.3182570841474064, 1e-12);
}

TEST(JsExact, SymmetricAndBounded) {
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
        std::vector<double> p(6), q(6);
        double sp = 0, sq = 0;
        for (std::size_t i = 0; i < 6; ++i) sp += p[i] = rng.uniform(), sq += q[i] = rng.uniform();
        for (std::size_t i = 0; i < 6; ++i) p[i] /= sp, q[i] /= sq;
        const double a = js_exact(p, q), b = js_exact(q, p);
        EXPECT_DOUBLE_EQ(a, b);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, std::numbers::ln2);
    }
}

TEST(JsExact, RejectsMismatchedBins) {
    EXPECT_THROW(js_exact(Bins{0.5, 0.5}, Bins{1.0}), ValidationError);
    const MazeSpec m = MazeSpec::from_layout(kLayout);
    StateHistogram a(m), b(4, 4);
    a.add({0, 0});
    b.add({0, 0});
    EXPECT_THROW(js_exact(a, b), ValidationError);
    EXPECT_THROW(StateHistogram(m).normalized(), ValidationError);
}

TEST(Histogram, CountsVisitsPerCell) {
    const MazeSpec m = MazeSpec::from_layout(kLayout);
    const std::vector<std::vector<std::vector<float>>> path = {{{0.f, 0.f}, {1.f, 0.f}, {2.f, 0.f}, {2.f, 1.f}}};
    const auto h = visitation_histogram(path, m);
    EXPECT_DOUBLE_EQ(h.total(), 4.0);
    const auto p = h.per_thousand();
    EXPECT_DOUBLE_EQ(p[m.index({0, 0})], 250.0);
    EXPECT_DOUBLE_EQ(p[m.index({1, 2})], 250.0);
    EXPECT_DOUBLE_EQ(js_exact(h, h), 0.0);
}

TEST(Histogram, RejectsEmptyAndOffGridTrajectories) {
    const MazeSpec m = MazeSpec::from_layout(kLayout);
    EXPECT_THROW(visitation_histogram({}, m), ValidationError);
    EXPECT_THROW(visitation_histogram({{}}, m), ValidationError);
    try {
        visitation_histogram({{{0.f, 0.f}, {9.f, 0.f}}}, m);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("state 1 of trajectory 0"), std::string::npos);
    }
}

TEST(Histogram, StateMatrixSkipsOffGridRows) {
    const MazeSpec m = MazeSpec::from_layout(kLayout);
    Matrix s = Matrix::matrix(3, 2);
    s(1, 0) = 20.f;
    s(2, 0) = 1.f;
    std::size_t skipped = 0;
    const auto h = state_histogram(s, m, &skipped);
    EXPECT_EQ(skipped, 1u);
    EXPECT_DOUBLE_EQ(h.total(), 2.0);
}

TEST(Discriminator, IdenticalSamplesGiveNearZero) {
    const Matrix p = gaussian(2000, 2, 0.0, 1), q = gaussian(2000, 2, 0.0, 2);
    EXPECT_LT(js_discriminator(p, q, {}, 7), 0.05);
}

TEST(Discriminator, SeparatedSamplesGiveNearLn2) {
    const Matrix p = gaussian(2000, 2, 0.0, 1), q = gaussian(2000, 2, 10.0, 2);
    EXPECT_NEAR(js_discriminator(p, q, {}, 7), std::numbers::ln2, 0.07);
}

TEST(Discriminator, MatchesQuadratureForUnitShift) {
    const double truth = gaussian_js(1.0);
    EXPECT_NEAR(truth, 0.1114214821847362, 1e-6);
    const Matrix p = gaussian(4000, 1, 0.0, 1), q = gaussian(4000, 1, 1.0, 2);
    EXPECT_NEAR(js_discriminator(p, q, {}, 7), truth, 0.08);
}

TEST(Discriminator, RejectsSmallOrMismatchedSets) {
    EXPECT_THROW(js_discriminator(gaussian(50, 2, 0, 1), gaussian(200, 2, 0, 2), {}, 1), ValidationError);
    EXPECT_THROW(js_discriminator(gaussian(200, 2, 0, 1), gaussian(200, 3, 0, 2), {}, 1), ValidationError);
}

TEST(SliceDivergence, ActionMseCountsMismatches) {
    const MazeSpec m = MazeSpec::from_layout(kLayout);
    const CellPolicy right = [](Cell) { return Action::right; };
    Dataset d;
    d.add(tuple({0, 0}, Action::right, {0, 1}));
    d.add(tuple({0, 0}, Action::down, {1, 0}));
    d.add(tuple({0, 1}, Action::left, {0, 0}));
    d.add(tuple({0, 2}, Action::up, {0, 2}));
    const auto r = action_divergence(d, right, m);
    EXPECT_DOUBLE_EQ(r.mse, 1.5);
    EXPECT_EQ(r.used, 4u);
}

TEST(SliceDivergence, TransitionMseAgainstTrueDynamics) {
    const MazeSpec m = MazeSpec::from_layout(kLayout);
    Dataset d;
    d.add(tuple({0, 0}, Action::right, {0, 1}));
    d.add(tuple({0, 0}, Action::right, {0, 0}));  // off by one cell
    d.add(tuple({0, 3}, Action::right, {0, 3}));  // wall state, skipped
    const auto r = transition_divergence(d, m);
    EXPECT_DOUBLE_EQ(r.mse, 0.5);
    EXPECT_EQ(r.used, 2u);
    EXPECT_EQ(r.skipped, 1u);
    Dataset walls;
    walls.add(tuple({0, 3}, Action::right, {0, 3}));
    EXPECT_THROW(transition_divergence(walls, m), ValidationError);
    EXPECT_THROW(transition_divergence(Dataset{}, m), ValidationError);
}

TEST(SliceDivergence, ReportOfExactDataIsZero) {
    const MazeSpec m = MazeSpec::from_layout(kLayout);
    const CellPolicy right = [](Cell) { return Action::right; };
    Dataset d;
    d.add(tuple({0, 0}, Action::right, {0, 1}));
    d.add(tuple({0, 1}, Action::right, {0, 2}));
    const auto rep = divergence_report("x", d, d.states(), right, m);
    EXPECT_DOUBLE_EQ(rep.state_js, 0.0);
    EXPECT_DOUBLE_EQ(rep.action_mse, 0.0);
    EXPECT_DOUBLE_EQ(rep.transition_mse, 0.0);
    EXPECT_EQ(rep.csv_row(), "x,exact,0.000000,0.000000,0.000000,2");
}
