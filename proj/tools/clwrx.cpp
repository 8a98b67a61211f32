// clwrx: dataset generation, labeling, training, evaluation and reporting.
//
// Exit codes: 0 success, 1 usage, 2 config error, 3 data error, 4 training abort.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clwrx/experiment.hpp"

namespace {

std::vector<clwrx::Strategy> parse_strategies(const std::string& list, const clwrx::ExperimentConfig& cfg) {
    if (list.empty()) return cfg.strategies;
    std::vector<clwrx::Strategy> out;
    std::istringstream ss(list);
    std::string name;
    while (std::getline(ss, name, ','))
        if (!name.empty()) out.push_back(clwrx::strategy_from_string(name));
    if (out.empty()) throw clwrx::ConfigError("--strategies: empty list");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fairness-based continual learning for wireless power control"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(clwrx::kVersion));

    std::string config_path, recipe_name, strategies, out_dir;
    std::uint64_t seed = 0;
    bool parallel = false;

    const auto add_common = [&](CLI::App* sub) {
        auto* cfg = sub->add_option("--config", config_path, "Experiment config (JSON)");
        auto* rec = sub->add_option("--recipe", recipe_name, "Built-in recipe: desk, paper-fig3, paper-unbalanced");
        cfg->excludes(rec);
        sub->add_option("--strategies", strategies, "Comma-separated strategy list");
        sub->add_option("--seed", seed, "Master seed override");
        sub->add_option("--out", out_dir, "Output directory override");
        sub->add_flag("--parallel", parallel, "Run strategies in parallel");
    };
    for (const char* name : {"generate", "label", "train", "eval", "report"}) add_common(app.add_subcommand(name));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;
    try {
        clwrx::ExperimentConfig cfg;
        if (!config_path.empty())
            cfg = clwrx::load_config(config_path);
        else if (!recipe_name.empty())
            cfg = clwrx::recipe(recipe_name);
        else
            throw clwrx::ConfigError("one of --config or --recipe is required");
        if (seed_given) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = std::filesystem::absolute(out_dir).string();
        cfg.validate();
        const auto list = parse_strategies(strategies, cfg);

        if (cmd == "generate") {
            const auto s = clwrx::cmd_generate(cfg);
            for (std::size_t e = 0; e < s.train_counts.size(); ++e)
                std::cout << "episode " << e << ": train " << s.train_counts[e] << ", test " << s.test_counts[e] << '\n';
        } else if (cmd == "label") {
            const auto s = clwrx::cmd_label(cfg);
            std::cout << std::setprecision(10);
            for (std::size_t e = 0; e < s.train_mean_rate.size(); ++e)
                std::cout << "episode " << e << ": mean oracle rate train " << s.train_mean_rate[e] << ", test "
                          << s.test_mean_rate[e] << '\n';
        } else if (cmd == "train") {
            const auto results = clwrx::cmd_train(cfg, list, parallel);
            std::cout << std::setprecision(6);
            for (const auto& r : results)
                std::cout << clwrx::to_string(r.strategy) << ": " << r.steps << " timestamps, mixture rate "
                          << (r.final_report ? r.final_report->mixture_rate : 0.0) << ", ratio "
                          << (r.final_report ? r.final_report->mixture_ratio : 0.0) << '\n';
        } else if (cmd == "eval") {
            const auto reps = clwrx::cmd_eval(cfg, list);
            std::cout << std::setprecision(6);
            for (std::size_t i = 0; i < reps.size(); ++i)
                std::cout << clwrx::to_string(list[i]) << ": mixture rate " << reps[i].mixture_rate << ", ratio "
                          << reps[i].mixture_ratio << '\n';
        } else {
            const auto r = clwrx::cmd_report(cfg, list);
            std::cout << r.timeseries.string() << '\n' << r.distribution.string() << '\n';
        }
    } catch (const clwrx::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const clwrx::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const clwrx::TrainingAbort& e) {
        std::cerr << "training aborted: " << e.what() << '\n';
        return 4;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
