// Command-line front end: gen-data, pretrain, finetune, divergence-table,
// ablate-energy and eval-policy. Exit codes: 0 success, 1 validation error,
// 2 runtime failure.

#include <CLI11.hpp>

#include <edis/commands.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    for (char c : s + ",") {
        if (c == ',') {
            if (!item.empty()) out.push_back(item);
            item.clear();
        } else if (c != ' ') {
            item += c;
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Energy-guided diffusion sampling experiments on a maze"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out = "out";
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "configuration file (defaults are built in)");
    app.add_option("--seed", seed, "root seed")->capture_default_str();
    app.add_option("--out", out, "output directory")->capture_default_str();
    app.add_option("--set", overrides, "override a config value, e.g. --set agent.env_steps=2000");

    std::size_t n = 0;
    auto* gen = app.add_subcommand("gen-data", "generate the offline dataset");
    gen->add_option("--n", n, "number of transitions (overrides data.n)");

    std::string data, q_path, source = "none", sources = "interaction,offline,mlp_transition,diffusion_transition,edis",
                                 drops;
    std::size_t seeds = 0, episodes = 20;
    auto* pre = app.add_subcommand("pretrain", "offline conservative Q pretraining");
    pre->add_option("--data", data, "offline dataset")->required();

    auto* fine = app.add_subcommand("finetune", "online fine-tuning with a data source");
    fine->add_option("--q", q_path, "pretrained Q checkpoint")->required();
    fine->add_option("--data", data, "offline dataset")->required();
    fine->add_option("--source", source, "none, offline, mlp, diffusion or edis")->capture_default_str();

    auto* table = app.add_subcommand("divergence-table", "state divergence of each data source against real interaction");
    table->add_option("--sources", sources, "comma-separated sources")->capture_default_str();
    table->add_option("--seeds", seeds, "number of seeds (overrides experiment.seeds)");

    auto* ablate = app.add_subcommand("ablate-energy", "EDIS generation with energy terms dropped");
    ablate->add_option("--drop", drops, "comma-separated terms: state, action, transition or none")->required();
    ablate->add_option("--seeds", seeds, "number of seeds (overrides experiment.seeds)");

    auto* eval = app.add_subcommand("eval-policy", "greedy returns of a Q checkpoint");
    eval->add_option("--q", q_path, "Q checkpoint")->required();
    eval->add_option("--episodes", episodes, "episodes")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        edis::CommandContext ctx;
        if (!config_path.empty()) ctx.config = edis::load_config(config_path);
        for (const auto& o : overrides) edis::apply_override(ctx.config, o);
        if (gen->count("--n")) ctx.config.exp.offline_n = n;
        if (table->count("--seeds") || ablate->count("--seeds")) ctx.config.seeds = seeds;
        ctx.seed = seed;
        ctx.out = out;

        if (*gen) edis::cmd_gen_data(ctx);
        if (*pre) edis::cmd_pretrain(ctx, data);
        if (*fine) edis::cmd_finetune(ctx, q_path, data, edis::parse_source(source));
        if (*table) edis::cmd_divergence_table(ctx, split_list(sources));
        if (*ablate) {
            std::vector<edis::EnergyDrop> list;
            for (const auto& d : split_list(drops)) list.push_back(edis::parse_drop(d));
            edis::cmd_ablate_energy(ctx, list);
        }
        if (*eval) edis::cmd_eval_policy(ctx, q_path, episodes);
    } catch (const edis::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
