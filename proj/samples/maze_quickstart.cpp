// Offline data, conservative pretraining, a short online phase, then one EDIS
// refill: the generated tuples are scored against the agent's own recent
// states and compared with replaying the offline data.

#include <edis/agent.hpp>

#include <cstdio>

int main() {
    using namespace edis;
    const MazeSpec spec = MazeSpec::from_layout({"S..#....", ".#.#.##.", ".#...#..", ".###.#.#",
                                                 "...#....", ".#.###.#", ".#...#..", "...#...E"});
    const std::uint64_t seed = 7;

    const Dataset offline = generate_offline_dataset(spec, {}, 2000, derive_seed(seed, "offline"));
    AgentConfig ac;
    ac.seed = seed;
    const TabularQ q0 = pretrain_offline(offline, spec, ac).q;
    std::printf("pretrained greedy return %.3f (optimal %.3f)\n", evaluate_policy(spec, q0, 5, 1), spec.optimal_return());

    ac.env_steps = 1000;
    FinetuneResult warm = finetune_online(spec, q0, offline, ac, DataSource::none);
    std::printf("after %zu online steps: return %.3f\n", ac.env_steps, warm.trace.back().eval_return);

    GeneratorConfig gc;
    gc.denoiser.net = {64, 3, true};
    gc.denoiser.iterations = 1500;
    gc.energy.hidden = 64;
    gc.energy.iterations = 400;
    gc.energy.updates_per_pass = 16;
    const CellPolicy policy = greedy_policy(warm.q);
    const auto recent = detail::positive_items(warm.buffers.positive);
    const EdisModel m = train_edis(offline, warm.buffers.online, recent, policy, spec, gc, seed);

    SamplerConfig sc;
    sc.seed = derive_seed(seed, "sample");
    const Dataset generated = decode_tuples(generate_tuples(m, 1000, gc.sched, sc, &gc.guidance), spec, false);
    const Matrix reference = detail::states_of(recent);
    std::printf("%s\n", DivergenceReport::kCsvHeader);
    std::printf("%s\n", divergence_report("offline", offline, reference, policy, spec).csv_row().c_str());
    std::printf("%s\n", divergence_report("edis", generated, reference, policy, spec).csv_row().c_str());
    return 0;
}
