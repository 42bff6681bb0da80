// Energy guidance on a 1-D toy: a denoiser fit to N(0, 1) is steered toward
// N(-1, 1) by a state energy trained on samples of the target.

#include <edis/energy.hpp>
#include <edis/sampler.hpp>

#include <cstdio>

namespace {

double mean_of(const edis::Matrix& x) {
    double m = 0.0;
    for (float v : x.values()) m += v;
    return m / static_cast<double>(x.size());
}

void print_histogram(const char* title, const edis::Matrix& x) {
    int bins[12] = {};
    for (float v : x.values()) {
        const int b = static_cast<int>((v + 4.0) / 0.75);
        if (b >= 0 && b < 12) ++bins[b];
    }
    std::printf("%s (mean %.3f)\n", title, mean_of(x));
    for (int b = 0; b < 12; ++b) {
        std::printf("  %5.2f | ", -4.0 + 0.75 * b);
        for (int i = 0; i < bins[b] / 20; ++i) std::putchar('#');
        std::putchar('\n');
    }
}

}  // namespace

int main() {
    using namespace edis;
    const NoiseSchedule sched;
    Rng rng(1, "demo-data");
    Matrix data = Matrix::matrix(20000, 1), target = Matrix::matrix(1000, 1);
    for (auto& v : data.values()) v = static_cast<float>(rng.normal());
    for (auto& v : target.values()) v = static_cast<float>(rng.normal() - 1.0);

    DenoiserTrainConfig dc;
    dc.net = {64, 3, true};
    dc.iterations = 1500;
    dc.lr = 2e-3;
    dc.batch_size = 128;
    dc.seed = 2;
    const Denoiser d = train_denoiser(data, sched, dc).denoiser;

    EnergyData ed;
    ed.recent = target;
    EnergyTrainConfig ec;
    ec.hidden = 64;
    ec.iterations = 1600;
    ec.updates_per_pass = 16;
    ec.seed = 3;
    const EnergySet energies = train_energies(d, TupleLayout{1, 0, 0}, ed, ec, sched).energies;
    const GuidanceFn g = make_guidance(energies);

    SamplerConfig sc;
    sc.seed = 4;
    print_histogram("unguided samples", reverse_sde_sample(d, nullptr, sched, sc, 2000));
    print_histogram("energy-guided samples, target mean -1", reverse_sde_sample(d, &g, sched, sc, 2000));
    return 0;
}
