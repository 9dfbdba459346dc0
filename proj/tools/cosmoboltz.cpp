// Command-line front end: run, sweep, probe and validate.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <omp.h>

#include "cosmoboltz/config.hpp"
#include "cosmoboltz/runner.hpp"

namespace cb = cosmoboltz;

namespace {

struct Common {
    std::string config;
    std::string preset;
    std::string out;
    int threads = 0;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "INI configuration file");
    sub->add_option("--preset", c.preset, "bundled preset name (see presets/)");
    sub->add_option("--out", c.out, "output directory; overrides run.output_dir");
    sub->add_option("--threads", c.threads, "worker threads; default from COSMOBOLTZ_THREADS")->check(CLI::PositiveNumber);
}

int default_threads() {
    if (const char* env = std::getenv("COSMOBOLTZ_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
        std::cerr << "warning: ignoring COSMOBOLTZ_THREADS='" << env << "'\n";
    }
    return omp_get_max_threads();
}

cb::RunConfig load(const Common& c) {
    if (c.config.empty() == c.preset.empty()) throw cb::ContractError("give exactly one of --config and --preset");
    const std::string path = c.config.empty() ? cb::find_preset(c.preset).string() : c.config;
    cb::RunConfig cfg = cb::load_config(path);
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cosmoboltz: homogeneous Boltzmann equation in an expanding background"};
    app.require_subcommand(1);
    Common opt;
    auto* run = app.add_subcommand("run", "evolve one configuration and judge its decay");
    auto* sweep = app.add_subcommand("sweep", "run the Cartesian product of the [sweep] lists");
    auto* probe = app.add_subcommand("probe", "estimate operator-bound constants on random fields");
    auto* validate = app.add_subcommand("validate", "parse a configuration and print its canonical form");
    for (auto* s : {run, sweep, probe, validate}) add_common(s, opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : cb::exit_config_error;
    }

    cb::RunConfig cfg;
    try {
        cfg = load(opt);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return cb::exit_config_error;
    }
    const int threads = opt.threads > 0 ? opt.threads : default_threads();
    omp_set_num_threads(threads);

    if (validate->parsed()) {
        std::cout << cb::to_ini(cfg);
        return cb::exit_pass;
    }

    cb::RunOutcome res;
    if (run->parsed()) {
        res = cb::run_experiment(cfg, cfg.output_dir);
    } else if (sweep->parsed()) {
        res = cb::run_sweep(cfg, cfg.output_dir, threads);
    } else {
        res = cb::run_probe(cfg, cfg.output_dir);
    }
    (res.exit_code == cb::exit_pass ? std::cout : std::cerr)
        << cfg.name << ": exit " << res.exit_code << " (" << res.message << ")\n";
    return res.exit_code;
}
