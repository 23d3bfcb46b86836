// Experiment runner for the rank-one (decomposable) Volterra adaptive
// filtering library. Each subcommand executes one experiment kind and writes
// its CSV artifacts into the output directory.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "sml/sml.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = 0;
    bool threads_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config, "scenario config file (key = value lines)");
    cmd->add_option("--out", flags.out, "output directory for CSV artifacts");
    cmd->add_option("--seed", flags.seed, "master seed override")->each([&](const std::string&) {
        flags.seed_set = true;
    });
    cmd->add_option("--threads", flags.threads, "worker thread count (0 = hardware)")
        ->each([&](const std::string&) { flags.threads_set = true; });
}

sml::ScenarioConfig defaults_for(sml::ExperimentKind kind) {
    sml::ScenarioConfig cfg;
    cfg.kind = kind;
    switch (kind) {
        case sml::ExperimentKind::identification:
            cfg.iterations = 20000;
            cfg.realizations = 1000;
            cfg.mu_scale = 0.05;
            break;
        case sml::ExperimentKind::stability_table:
            cfg.iterations = 5000;
            cfg.realizations = 1000;
            cfg.filters = {sml::FilterSpec{sml::FilterKind::sml_lms, 1, 1},
                           sml::FilterSpec{sml::FilterKind::sml_true_lms, 4, 1},
                           sml::FilterSpec{sml::FilterKind::sml_true_lms, 8, 1}};
            break;
        case sml::ExperimentKind::sd_comparison:
            cfg.iterations = 5000;
            cfg.realizations = 10000;
            cfg.mu_scale = 0.01;
            break;
        case sml::ExperimentKind::rho_sweep:
            cfg.memory = 21;
            cfg.iterations = 200000;
            cfg.realizations = 100;
            cfg.mu_scale = 0.03;
            break;
        case sml::ExperimentKind::chaos_sweep:
            break;
    }
    return cfg;
}

int run(sml::ExperimentKind kind, const CommonFlags& flags) {
    sml::ScenarioConfig cfg = defaults_for(kind);
    if (!flags.config.empty()) cfg = sml::parse_scenario_file(flags.config, cfg);
    if (cfg.kind != kind)
        throw std::invalid_argument("config kind '" + sml::experiment_kind_name(cfg.kind) +
                                    "' does not match the subcommand");
    if (!flags.out.empty()) cfg.out_dir = flags.out;
    if (flags.seed_set) cfg.seed = flags.seed;
    if (flags.threads_set) cfg.threads = flags.threads;
    cfg.validate();
    std::cout << sml::run_and_write(cfg);
    std::cout << "artifacts written to " << cfg.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rank-one (decomposable) Volterra adaptive filtering experiments"};
    app.require_subcommand(1);

    CommonFlags identify_flags, stability_flags, sd_flags, rho_flags, chaos_flags;
    auto* identify = app.add_subcommand("identify", "system-identification ensemble, EMSE/MSE curves");
    add_common(identify, identify_flags);
    auto* stability = app.add_subcommand("stability", "divergence counts over a step-size grid");
    add_common(stability, stability_flags);
    auto* sdcompare = app.add_subcommand("sdcompare", "steepest descent vs ensemble LMS trajectories");
    add_common(sdcompare, sd_flags);
    auto* rhosweep = app.add_subcommand("rhosweep", "Gaussian-kernel family sweep over rho");
    add_common(rhosweep, rho_flags);
    auto* chaos = app.add_subcommand("chaos", "bifurcation sweep of the scalar testbed");
    add_common(chaos, chaos_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (identify->parsed()) return run(sml::ExperimentKind::identification, identify_flags);
        if (stability->parsed()) return run(sml::ExperimentKind::stability_table, stability_flags);
        if (sdcompare->parsed()) return run(sml::ExperimentKind::sd_comparison, sd_flags);
        if (rhosweep->parsed()) return run(sml::ExperimentKind::rho_sweep, rho_flags);
        if (chaos->parsed()) return run(sml::ExperimentKind::chaos_sweep, chaos_flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
