#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "shelab/experiment.hpp"

// Experiment driver: subcommand + --config + optional --seed override + --out.
// Exit codes: 0 all consistent/completed, 2 any Violation, 3 Inconclusive
// present, 1 error.

int main(int argc, char** argv) {
    CLI::App app{"shelab: stochastic comparison laboratory for lattice heat equations"};
    app.require_subcommand(1);

    const std::vector<std::string> kinds = {"simulate",  "compare-rho", "compare-gamma",
                                            "slepian",   "oracle",      "dalang",
                                            "convergence"};
    std::string config_path;
    std::string out_dir = "out";
    std::string seed_override;
    for (const std::string& kind : kinds) {
        CLI::App* sub = app.add_subcommand(kind, "run a '" + kind + "' experiment");
        sub->add_option("--config", config_path, "experiment config file")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_override, "override the config seed");
    }

    CLI11_PARSE(app, argc, argv);

    std::string kind = app.get_subcommands().front()->get_name();
    try {
        shelab::cli::Config cfg = shelab::cli::Config::from_file(config_path);
        if (!cfg.has("experiment")) cfg.set("experiment", kind);
        if (cfg.get_string("experiment") != kind) {
            std::cerr << "error: config experiment '" << cfg.get_string("experiment")
                      << "' does not match subcommand '" << kind << "'\n";
            return shelab::cli::kExitError;
        }
        if (!seed_override.empty()) cfg.set("seed", seed_override);

        shelab::cli::RunResult result = shelab::cli::run(cfg, out_dir);
        std::cout << result.summary;
        for (const std::string& a : result.artifacts) std::cout << "wrote " << a << "\n";
        return result.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return shelab::cli::kExitError;
    }
}
