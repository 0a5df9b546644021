// Command-line front end: one subcommand per experiment kind, plus a config
// validator. Errors leave a machine-readable JSON object on stderr and a
// nonzero exit code.

#include "latwalk/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

namespace {

using latwalk::json;

struct CommonOptions {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned workers = 0;
};

void add_common(CLI::App* cmd, CommonOptions& opts, bool needs_out) {
    cmd->add_option("--config", opts.config_path, "experiment configuration (JSON)")
        ->required();
    auto* seed = cmd->add_option("--seed", opts.seed, "override the config's master seed");
    cmd->parse_complete_callback([&opts, seed] { opts.seed_set = seed->count() > 0; });
    cmd->add_option("--workers", opts.workers,
                    "worker threads (default: LATWALK_WORKERS or hardware)");
    if (needs_out)
        cmd->add_option("--out", opts.out_dir, "output directory (default: LATWALK_OUT)");
}

unsigned resolve_workers(const CommonOptions& opts) {
    if (opts.workers > 0) return opts.workers;
    if (const char* env = std::getenv("LATWALK_WORKERS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return unsigned(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

std::string resolve_out_dir(const CommonOptions& opts) {
    if (!opts.out_dir.empty()) return opts.out_dir;
    if (const char* env = std::getenv("LATWALK_OUT")) return env;
    return "latwalk-out";
}

int fail(const std::string& kind, const std::string& message) {
    json err;
    err["error"] = {{"kind", kind}, {"message", message}};
    std::cerr << err.dump() << "\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chaotic atomic transport in a 1D optical lattice: simulation, "
                 "statistics, and parameter scans"};
    app.require_subcommand(1);

    const std::vector<std::string> kinds = {"simulate",     "lyapunov-map", "pdf",
                                            "map-pdf",      "analytic-pdf", "fractal-scan"};
    std::map<std::string, CommonOptions> opts;
    for (const auto& kind : kinds) {
        auto* cmd = app.add_subcommand(kind, "run the " + kind + " experiment");
        add_common(cmd, opts[kind], true);
    }
    auto* validate_cmd =
        app.add_subcommand("validate", "report H, K, D, l_cr and regime warnings");
    add_common(validate_cmd, opts["validate"], false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        return fail("UsageError", e.what());
    }

    std::string kind;
    for (const auto& [name, _] : opts)
        if (app.get_subcommand(name)->parsed()) kind = name;

    try {
        auto& o = opts[kind];
        latwalk::ExperimentConfig cfg = latwalk::load_config(o.config_path);
        if (o.seed_set) cfg.seed = o.seed;

        if (kind == "validate") {
            json report;
            report["derived"] = latwalk::derived_quantities(cfg.physics);
            report["warnings"] = latwalk::validate_config(cfg);
            std::cout << report.dump(2) << "\n";
            return 0;
        }
        const auto manifest =
            latwalk::run_experiment(kind, cfg, resolve_out_dir(o), resolve_workers(o));
        std::cout << "wrote " << manifest["outputs"].size() << " files to "
                  << resolve_out_dir(o) << "\n";
        return 0;
    } catch (const latwalk::ConfigError& e) {
        return fail("ConfigError", e.what());
    } catch (const latwalk::IoError& e) {
        return fail("IoError", e.what());
    } catch (const latwalk::StepFailure& e) {
        return fail("StepFailure", e.what());
    } catch (const std::exception& e) {
        return fail("RunError", e.what());
    }
}
