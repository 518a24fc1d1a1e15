#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rae/experiments.hpp"

namespace rae {

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
};

ExperimentConfig load_config(const Options& opt) {
    ExperimentConfig cfg;
    if (!opt.config.empty() && opt.config != "default") {
        std::ifstream f(opt.config, std::ios::binary);
        if (!f) throw IoError("cannot read config " + opt.config);
        std::ostringstream text;
        text << f.rdbuf();
        cfg = parse_config(text.str());
    }
    if (opt.seed) cfg.seeds = {*opt.seed};
    if (!opt.out.empty()) cfg.out = opt.out;
    return cfg;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Representation-autoencoder latent diffusion at desk scale"};
    app.name("rae");
    app.require_subcommand(1);

    Options opt;
    struct Command {
        const char* name;
        const char* help;
    };
    const std::vector<Command> commands{
        {"overfit", "single-target width sweep against the loss bound"},
        {"pipeline", "decoder + diffusion training, generation and scoring (also the ablation kinds)"},
        {"generate", "sample from model.ckpt and decoder.ckpt in --out"},
        {"verify-theory", "spectral oracle cases plus the overfit sweep"},
        {"metrics", "Frechet proxy of samples and the label-plan gap"},
        {"convert-data", "netpbm images at data.path to dataset.raed in --out"},
    };
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", opt.config, "config file, or 'default' for built-in defaults");
        sub->add_option("--seed", opt.seed, "replaces the seed list with one seed");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--override", opt.overrides, "key=value applied after the config file")->take_all();
    }

    if (argc <= 1) {
        err << app.help();
        return kExitUsage;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    ExperimentConfig cfg;
    try {
        cfg = load_config(opt);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    try {
        for (const auto& o : opt.overrides) apply_override(cfg, o);
        cfg.validate();
    } catch (const ParseError& e) {
        err << "error: --override: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        Report report;
        if (command == "overfit") {
            report = run_overfit_sweep(cfg);
        } else if (command == "verify-theory") {
            report = run_verify_theory(cfg);
        } else if (command == "generate") {
            report = run_generate(cfg);
        } else if (command == "metrics") {
            report = run_metrics(cfg);
        } else if (command == "convert-data") {
            report = run_convert_data(cfg);
        } else {
            const bool ablation = cfg.kind == ExperimentKind::schedule_ablation ||
                                  cfg.kind == ExperimentKind::noiseaug_ablation;
            report = ablation ? run_experiment(cfg) : run_pipeline(cfg);
        }
        report.write(cfg.out);
        out << report.to_text();
        return report.passed() ? kExitOk : kExitAcceptanceFail;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace rae
