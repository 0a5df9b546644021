// Experiment orchestration: strict config parsing, deterministic seeding,
// parallel execution, and manifest-tracked outputs. Every experiment writes
// its data files plus a manifest.json whose embedded effective config can be
// replayed into a byte-identical run; output digests make the comparison
// cheap. Timestamps live in the manifest but are excluded from determinism
// comparisons.
#pragma once

#include "fractal_scan.hpp"
#include "integrator.hpp"
#include "io.hpp"
#include "lyapunov.hpp"
#include "node_map.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sha256.hpp"
#include "transport_stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace latwalk {

using nlohmann::json;

struct ConfigError : std::runtime_error {
    std::string key;
    ConfigError(const std::string& key_, const std::string& message)
        : std::runtime_error("config error at '" + key_ + "': " + message), key(key_) {}
};

namespace detail {

inline void require_known_keys(const json& obj, const std::set<std::string>& known,
                               const std::string& path) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key))
            throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
}

inline double get_number(const json& obj, const std::string& path, const std::string& key,
                         double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number())
        throw ConfigError(path + "." + key, "expected a number");
    return obj.at(key).get<double>();
}

inline std::uint64_t get_uint(const json& obj, const std::string& path,
                              const std::string& key, std::uint64_t fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number_unsigned() && !obj.at(key).is_number_integer())
        throw ConfigError(path + "." + key, "expected a non-negative integer");
    const auto value = obj.at(key).get<std::int64_t>();
    if (value < 0) throw ConfigError(path + "." + key, "expected a non-negative integer");
    return std::uint64_t(value);
}

inline std::string get_string(const json& obj, const std::string& path,
                              const std::string& key, const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string())
        throw ConfigError(path + "." + key, "expected a string");
    return obj.at(key).get<std::string>();
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

struct PhysicsConfig {
    double omega_r = 1e-5;
    double delta = 0.0;
    double p0 = 200.0;
    double x0 = 0.0;
    double u0 = 0.0;
    double v0 = 0.0;
    double z0 = -1.0;

    AtomState state() const { return AtomState{0.0, x0, p0, u0, v0, z0}; }
    LatticeParams lattice() const { return LatticeParams{omega_r, delta}; }
    EnergyH energy() const { return total_energy(state(), lattice()); }
};

struct SimulateConfig {
    double tau_max = 1e6;
};

struct LyapunovMapConfig {
    double delta_min = -0.1, delta_max = 0.1;
    std::size_t n_delta = 21;
    double p0_min = 50.0, p0_max = 1000.0;
    std::size_t n_p0 = 20;
    double tau_max = 2e4;
    double d0 = 1e-8;
    double renorm_interval = 50.0;
    double transient_frac = 0.1;
    double abs_tol = 1e-10, rel_tol = 1e-10;
};

struct PdfConfig {
    double tau_max = 1e7;
    std::size_t trajectories = 16;
    double x0_spread = 0.2;  ///< H-preserving dither of x0 across the ensemble
};

struct MapPdfConfig {
    std::size_t events = 1000000;
    std::size_t walkers = 64;
};

struct AnalyticPdfConfig {
    long l_max = 20000;
    NormalizationMode normalization = NormalizationMode::PerKind;
    double epsilon_in_k = 1.0;  ///< start offset of the exit-problem curve, in units of K
};

struct FractalScanConfig {
    double delta_lo = -0.02, delta_hi = -0.001;
    std::size_t resolution = 1000;
    int depth = 4;
    double refine_factor = 10.0;
    double tau_max = 1e6;
    std::size_t window = 3;
};

struct ExperimentConfig {
    PhysicsConfig physics;
    IntegratorConfig integrator;
    SimulateConfig simulate;
    LyapunovMapConfig lyapunov_map;
    PdfConfig pdf;
    MapPdfConfig map_pdf;
    AnalyticPdfConfig analytic_pdf;
    FractalScanConfig fractal_scan;
    std::uint64_t seed = 1;
};

inline ExperimentConfig parse_config(const json& j) {
    using detail::get_number;
    using detail::get_string;
    using detail::get_uint;
    using detail::require_known_keys;

    if (!j.is_object()) throw ConfigError("", "top level must be an object");
    require_known_keys(j, {"physics", "integrator", "seed", "simulate", "lyapunov_map",
                           "pdf", "map_pdf", "analytic_pdf", "fractal_scan"},
                       "");
    ExperimentConfig cfg;
    cfg.seed = get_uint(j, "", "seed", cfg.seed);

    if (j.contains("physics")) {
        const auto& p = j.at("physics");
        require_known_keys(p, {"omega_r", "delta", "p0", "x0", "u0", "v0", "z0"}, "physics");
        auto& c = cfg.physics;
        c.omega_r = get_number(p, "physics", "omega_r", c.omega_r);
        c.delta = get_number(p, "physics", "delta", c.delta);
        c.p0 = get_number(p, "physics", "p0", c.p0);
        c.x0 = get_number(p, "physics", "x0", c.x0);
        c.u0 = get_number(p, "physics", "u0", c.u0);
        c.v0 = get_number(p, "physics", "v0", c.v0);
        c.z0 = get_number(p, "physics", "z0", c.z0);
    }
    if (j.contains("integrator")) {
        const auto& p = j.at("integrator");
        require_known_keys(
            p, {"scheme", "abs_tol", "rel_tol", "max_step", "event_tol", "sample_stride"},
            "integrator");
        auto& c = cfg.integrator;
        const std::string scheme = get_string(p, "integrator", "scheme", "dop853");
        if (scheme == "dop853")
            c.scheme = Scheme::Dop853;
        else if (scheme == "dopri5")
            c.scheme = Scheme::Dopri5;
        else
            throw ConfigError("integrator.scheme", "expected 'dop853' or 'dopri5'");
        c.abs_tol = get_number(p, "integrator", "abs_tol", c.abs_tol);
        c.rel_tol = get_number(p, "integrator", "rel_tol", c.rel_tol);
        c.max_step = get_number(p, "integrator", "max_step", c.max_step);
        c.event_tol = get_number(p, "integrator", "event_tol", c.event_tol);
        c.sample_stride = long(get_uint(p, "integrator", "sample_stride",
                                        std::uint64_t(c.sample_stride)));
    }
    if (j.contains("simulate")) {
        const auto& p = j.at("simulate");
        require_known_keys(p, {"tau_max"}, "simulate");
        cfg.simulate.tau_max = get_number(p, "simulate", "tau_max", cfg.simulate.tau_max);
    }
    if (j.contains("lyapunov_map")) {
        const auto& p = j.at("lyapunov_map");
        require_known_keys(p,
                           {"delta_min", "delta_max", "n_delta", "p0_min", "p0_max", "n_p0",
                            "tau_max", "d0", "renorm_interval", "transient_frac", "abs_tol",
                            "rel_tol"},
                           "lyapunov_map");
        auto& c = cfg.lyapunov_map;
        c.delta_min = get_number(p, "lyapunov_map", "delta_min", c.delta_min);
        c.delta_max = get_number(p, "lyapunov_map", "delta_max", c.delta_max);
        c.n_delta = get_uint(p, "lyapunov_map", "n_delta", c.n_delta);
        c.p0_min = get_number(p, "lyapunov_map", "p0_min", c.p0_min);
        c.p0_max = get_number(p, "lyapunov_map", "p0_max", c.p0_max);
        c.n_p0 = get_uint(p, "lyapunov_map", "n_p0", c.n_p0);
        c.tau_max = get_number(p, "lyapunov_map", "tau_max", c.tau_max);
        c.d0 = get_number(p, "lyapunov_map", "d0", c.d0);
        c.renorm_interval = get_number(p, "lyapunov_map", "renorm_interval", c.renorm_interval);
        c.transient_frac = get_number(p, "lyapunov_map", "transient_frac", c.transient_frac);
        c.abs_tol = get_number(p, "lyapunov_map", "abs_tol", c.abs_tol);
        c.rel_tol = get_number(p, "lyapunov_map", "rel_tol", c.rel_tol);
    }
    if (j.contains("pdf")) {
        const auto& p = j.at("pdf");
        require_known_keys(p, {"tau_max", "trajectories", "x0_spread"}, "pdf");
        auto& c = cfg.pdf;
        c.tau_max = get_number(p, "pdf", "tau_max", c.tau_max);
        c.trajectories = get_uint(p, "pdf", "trajectories", c.trajectories);
        c.x0_spread = get_number(p, "pdf", "x0_spread", c.x0_spread);
    }
    if (j.contains("map_pdf")) {
        const auto& p = j.at("map_pdf");
        require_known_keys(p, {"events", "walkers"}, "map_pdf");
        cfg.map_pdf.events = get_uint(p, "map_pdf", "events", cfg.map_pdf.events);
        cfg.map_pdf.walkers = get_uint(p, "map_pdf", "walkers", cfg.map_pdf.walkers);
        if (cfg.map_pdf.walkers == 0) throw ConfigError("map_pdf.walkers", "must be positive");
    }
    if (j.contains("analytic_pdf")) {
        const auto& p = j.at("analytic_pdf");
        require_known_keys(p, {"l_max", "normalization", "epsilon_in_k"}, "analytic_pdf");
        auto& c = cfg.analytic_pdf;
        c.l_max = long(get_uint(p, "analytic_pdf", "l_max", std::uint64_t(c.l_max)));
        const std::string mode = get_string(p, "analytic_pdf", "normalization", "per_kind");
        if (mode == "per_kind")
            c.normalization = NormalizationMode::PerKind;
        else if (mode == "shared")
            c.normalization = NormalizationMode::Shared;
        else
            throw ConfigError("analytic_pdf.normalization", "expected 'per_kind' or 'shared'");
        c.epsilon_in_k = get_number(p, "analytic_pdf", "epsilon_in_k", c.epsilon_in_k);
    }
    if (j.contains("fractal_scan")) {
        const auto& p = j.at("fractal_scan");
        require_known_keys(p,
                           {"delta_lo", "delta_hi", "resolution", "depth", "refine_factor",
                            "tau_max", "window"},
                           "fractal_scan");
        auto& c = cfg.fractal_scan;
        c.delta_lo = get_number(p, "fractal_scan", "delta_lo", c.delta_lo);
        c.delta_hi = get_number(p, "fractal_scan", "delta_hi", c.delta_hi);
        c.resolution = get_uint(p, "fractal_scan", "resolution", c.resolution);
        c.depth = int(get_uint(p, "fractal_scan", "depth", std::uint64_t(c.depth)));
        c.refine_factor = get_number(p, "fractal_scan", "refine_factor", c.refine_factor);
        c.tau_max = get_number(p, "fractal_scan", "tau_max", c.tau_max);
        c.window = get_uint(p, "fractal_scan", "window", c.window);
        if (c.refine_factor < 10.0)
            throw ConfigError("fractal_scan.refine_factor", "must be at least 10");
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// Fully resolved configuration, suitable for replaying the run.
inline json effective_config_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["physics"] = {{"omega_r", cfg.physics.omega_r}, {"delta", cfg.physics.delta},
                    {"p0", cfg.physics.p0},           {"x0", cfg.physics.x0},
                    {"u0", cfg.physics.u0},           {"v0", cfg.physics.v0},
                    {"z0", cfg.physics.z0}};
    j["integrator"] = {
        {"scheme", cfg.integrator.scheme == Scheme::Dop853 ? "dop853" : "dopri5"},
        {"abs_tol", cfg.integrator.abs_tol},
        {"rel_tol", cfg.integrator.rel_tol},
        {"max_step", cfg.integrator.max_step},
        {"event_tol", cfg.integrator.event_tol},
        {"sample_stride", cfg.integrator.sample_stride}};
    j["simulate"] = {{"tau_max", cfg.simulate.tau_max}};
    j["lyapunov_map"] = {{"delta_min", cfg.lyapunov_map.delta_min},
                         {"delta_max", cfg.lyapunov_map.delta_max},
                         {"n_delta", cfg.lyapunov_map.n_delta},
                         {"p0_min", cfg.lyapunov_map.p0_min},
                         {"p0_max", cfg.lyapunov_map.p0_max},
                         {"n_p0", cfg.lyapunov_map.n_p0},
                         {"tau_max", cfg.lyapunov_map.tau_max},
                         {"d0", cfg.lyapunov_map.d0},
                         {"renorm_interval", cfg.lyapunov_map.renorm_interval},
                         {"transient_frac", cfg.lyapunov_map.transient_frac},
                         {"abs_tol", cfg.lyapunov_map.abs_tol},
                         {"rel_tol", cfg.lyapunov_map.rel_tol}};
    j["pdf"] = {{"tau_max", cfg.pdf.tau_max},
                {"trajectories", cfg.pdf.trajectories},
                {"x0_spread", cfg.pdf.x0_spread}};
    j["map_pdf"] = {{"events", cfg.map_pdf.events}, {"walkers", cfg.map_pdf.walkers}};
    j["analytic_pdf"] = {
        {"l_max", cfg.analytic_pdf.l_max},
        {"normalization",
         cfg.analytic_pdf.normalization == NormalizationMode::PerKind ? "per_kind" : "shared"},
        {"epsilon_in_k", cfg.analytic_pdf.epsilon_in_k}};
    j["fractal_scan"] = {{"delta_lo", cfg.fractal_scan.delta_lo},
                         {"delta_hi", cfg.fractal_scan.delta_hi},
                         {"resolution", cfg.fractal_scan.resolution},
                         {"depth", cfg.fractal_scan.depth},
                         {"refine_factor", cfg.fractal_scan.refine_factor},
                         {"tau_max", cfg.fractal_scan.tau_max},
                         {"window", cfg.fractal_scan.window}};
    return j;
}

/// Derived regime quantities for manifests and the validate report. The
/// reference figures quote ground-state initial conditions next to energies
/// that match u0 = z0 = 0.7071; manifests therefore record the energy of the
/// stated state and of the ground-state convention side by side.
inline json derived_quantities(const PhysicsConfig& physics) {
    json d;
    const EnergyH h = physics.energy();
    d["h_energy"] = h.value;
    AtomState ground = physics.state();
    ground.u = ground.v = 0.0;
    ground.z = -1.0;
    d["h_ground_state_convention"] = total_energy(ground, physics.lattice()).value;
    if (h.value > 0.0) {
        const NodeMomentum pn = p_node(h, physics.omega_r);
        const JumpAmplitude k = jump_amplitude(physics.lattice(), pn);
        const double diff = diffusion_coefficient(physics.lattice(), pn.value);
        d["p_node"] = pn.value;
        d["jump_amplitude"] = k.value;
        d["diffusion"] = diff;
        if (h.value < 1.0) {
            switch (regime_classify(k, h)) {
                case TransportRegime::LargeJump: d["regime"] = "large_jump"; break;
                case TransportRegime::SmallJumpDiffusive:
                    d["regime"] = "small_jump_diffusive";
                    break;
                case TransportRegime::SmallJumpBoundary:
                    d["regime"] = "small_jump_boundary";
                    break;
            }
            if (diff > 0.0) {
                d["l_cr_flight"] = l_critical(flight_arc_halfwidth(h), diff);
                d["l_cr_trapping"] = l_critical(trapping_arc_halfwidth(h), diff);
                d["l_cr_flight_full_arc"] = 2.0 * l_critical(flight_arc_halfwidth(h), diff);
                d["l_cr_trapping_full_arc"] =
                    2.0 * l_critical(trapping_arc_halfwidth(h), diff);
            }
        }
    }
    return d;
}

/// Regime warnings of the validate subcommand.
inline std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> warnings;
    const EnergyH h = cfg.physics.energy();
    if (h.value <= 0.0) {
        warnings.push_back(
            "H <= 0: the atom cannot reach a node; it oscillates in the first well and no "
            "transport statistics exist");
        return warnings;
    }
    if (h.value >= 1.0) {
        warnings.push_back("ballistic regime, no trapping events expected (H >= 1)");
        return warnings;
    }
    const JumpAmplitude k = jump_amplitude(cfg.physics.lattice(), p_node(h, cfg.physics.omega_r));
    if (k.value == 0.0)
        warnings.push_back("delta = 0: u is frozen, the stochastic map is the identity");
    if (k.value >= 0.5 * std::numbers::pi)
        warnings.push_back(
            "large-jump regime: the small-jump analytic PDFs are out of their validity range");
    else {
        if (!diffusive_for(TransportKind::Flight, k, h))
            warnings.push_back(
                "jump amplitude is of the order of the flight arc: the flight PDF is expected "
                "to be exponential, the diffusive series is out of regime");
        if (!diffusive_for(TransportKind::Trapping, k, h))
            warnings.push_back(
                "jump amplitude is of the order of the trapping arc: the trapping PDF is "
                "expected to be exponential, the diffusive series is out of regime");
    }
    return warnings;
}

struct RunError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One experiment's outputs, staged in memory and flushed with digests.
class OutputStage {
public:
    void add(const std::string& name, std::string content) {
        names_.push_back(name);
        contents_[name] = std::move(content);
    }

    json flush(const std::filesystem::path& out_dir) const {
        std::filesystem::create_directories(out_dir);
        json inventory = json::array();
        for (const auto& name : names_) {
            const auto& content = contents_.at(name);
            atomic_write_file(out_dir / name, content);
            inventory.push_back({{"file", name},
                                 {"sha256", sha256_hex(content)},
                                 {"bytes", content.size()}});
        }
        return inventory;
    }

private:
    std::vector<std::string> names_;
    std::map<std::string, std::string> contents_;
};

namespace experiments {

struct PdfOutcome {
    PdfHistogram flight;
    PdfHistogram trapping;
    std::size_t censored_flight = 0;
    std::size_t censored_trapping = 0;
    std::size_t crossings = 0;
    std::size_t turns = 0;
};

inline json pdf_report(const PdfOutcome& out, const PhysicsConfig& physics) {
    json rep = derived_quantities(physics);
    rep["flight_events"] = out.flight.total();
    rep["trapping_events"] = out.trapping.total();
    rep["censored_flight_events"] = out.censored_flight;
    rep["censored_trapping_events"] = out.censored_trapping;
    rep["crossings"] = out.crossings;
    rep["turns"] = out.turns;
    auto fit_block = [&](const PdfHistogram& hist, double l_cr) {
        json f;
        try {
            const auto head =
                fit_tail(hist, 3.0, std::max(10.0, 0.7 * l_cr), TailModel::PowerLaw);
            f["head_power"] = {{"slope", head.coefficient},
                               {"stderr", head.stderr_coefficient},
                               {"r_squared", head.r_squared},
                               {"bins", head.n_bins}};
        } catch (const InsufficientData&) {
            f["head_power"] = nullptr;
        }
        try {
            const auto tail = fit_tail(hist, l_cr * l_cr, 30.0 * l_cr * l_cr,
                                       TailModel::Exponential);
            f["tail_exponential"] = {{"rate", tail.coefficient},
                                     {"stderr", tail.stderr_coefficient},
                                     {"r_squared", tail.r_squared},
                                     {"bins", tail.n_bins}};
        } catch (const InsufficientData&) {
            f["tail_exponential"] = nullptr;
        }
        return f;
    };
    const EnergyH h = physics.energy();
    if (h.value > 0.0 && h.value < 1.0) {
        const double diff =
            diffusion_coefficient(physics.lattice(), p_node(h, physics.omega_r).value);
        if (diff > 0.0) {
            rep["flight_fits"] =
                fit_block(out.flight, l_critical(flight_arc_halfwidth(h), diff));
            rep["trapping_fits"] =
                fit_block(out.trapping, l_critical(trapping_arc_halfwidth(h), diff));
        }
    }
    return rep;
}

inline void run_simulate(const ExperimentConfig& cfg, OutputStage& stage, json& derived) {
    IntegratorConfig icfg = cfg.integrator;
    if (icfg.sample_stride == 0) icfg.sample_stride = 100;
    const auto traj =
        integrate(cfg.physics.state(), cfg.physics.lattice(), icfg, cfg.simulate.tau_max);
    stage.add("trajectory.csv", trajectory_csv(traj));
    stage.add("events.jsonl", events_jsonl(traj.crossings, traj.turns));
    derived = derived_quantities(cfg.physics);
    derived["max_abs_dh"] = traj.drift.max_abs_dh;
    derived["max_abs_dnorm"] = traj.drift.max_abs_dnorm;
    derived["crossings"] = traj.crossings.size();
    derived["turns"] = traj.turns.size();
    derived["accepted_steps"] = traj.steps;
}

inline void run_lyapunov_map(const ExperimentConfig& cfg, unsigned workers,
                             OutputStage& stage, json& derived) {
    const auto& m = cfg.lyapunov_map;
    LyapunovConfig lcfg;
    lcfg.d0 = m.d0;
    lcfg.renorm_interval = m.renorm_interval;
    lcfg.tau_max = m.tau_max;
    lcfg.transient_skip = m.transient_frac * m.tau_max;
    lcfg.integrator = cfg.integrator;
    lcfg.integrator.abs_tol = m.abs_tol;
    lcfg.integrator.rel_tol = m.rel_tol;

    AtomState base = cfg.physics.state();
    const auto grid =
        lambda_map(linspace(m.delta_min, m.delta_max, m.n_delta),
                   linspace(m.p0_min, m.p0_max, m.n_p0), base, cfg.physics.omega_r, lcfg,
                   cfg.seed, workers);

    stage.add("lambda.csv", lambda_grid_csv(grid));
    json sidecar;
    sidecar["delta_axis"] = grid.delta_axis;
    sidecar["p0_axis"] = grid.p0_axis;
    sidecar["initial_state"] = {{"x0", base.x}, {"u0", base.u}, {"v0", base.v}, {"z0", base.z}};
    sidecar["omega_r"] = cfg.physics.omega_r;
    sidecar["seed"] = cfg.seed;
    sidecar["tau_max"] = m.tau_max;
    sidecar["d0"] = m.d0;
    sidecar["renorm_interval"] = m.renorm_interval;
    json failures = json::array();
    std::size_t failed = 0;
    for (std::size_t i = 0; i < grid.delta_axis.size(); ++i)
        for (std::size_t jx = 0; jx < grid.p0_axis.size(); ++jx)
            if (grid.at(i, jx).status == CellStatus::Failed) {
                ++failed;
                failures.push_back({{"delta", grid.delta_axis[i]},
                                    {"p0", grid.p0_axis[jx]},
                                    {"reason", grid.at(i, jx).failure}});
            }
    sidecar["failed_cells"] = failures;
    stage.add("lambda_meta.json", sidecar.dump(2) + "\n");
    derived["cells"] = grid.cells.size();
    derived["failed_cells"] = failed;
}

inline PdfOutcome collect_ode_pdf(const ExperimentConfig& cfg, unsigned workers) {
    const auto& p = cfg.pdf;
    if (p.trajectories == 0) throw RunError("pdf: need at least one trajectory");
    const PhysicsConfig& ph = cfg.physics;
    const double h_target = ph.energy().value;
    if (!(h_target > 0.0))
        throw RunError("pdf: H <= 0, the atom never reaches a node");

    struct MemberResult {
        std::vector<TransportEvent> events;
        std::size_t crossings = 0, turns = 0;
    };
    std::vector<MemberResult> results(p.trajectories);
    parallel_for(p.trajectories, workers, [&](std::size_t i) {
        AtomState s0 = ph.state();
        if (p.trajectories > 1) {
            // spread x0 and restore the energy through p0 so every member
            // runs at exactly the nominal H
            const double frac = double(i) / double(p.trajectories - 1) - 0.5;
            s0.x = ph.x0 + p.x0_spread * frac;
            const double kinetic =
                h_target + s0.u * std::cos(s0.x) + 0.5 * ph.delta * s0.z;
            if (!(kinetic > 0.0)) throw RunError("pdf: x0 spread leaves no kinetic energy");
            s0.p = std::sqrt(2.0 * kinetic / ph.omega_r);
        }
        const auto traj = integrate(s0, ph.lattice(), cfg.integrator, p.tau_max);
        results[i].events = segment_events(traj);
        results[i].crossings = traj.crossings.size();
        results[i].turns = traj.turns.size();
    });

    PdfOutcome out;
    for (const auto& r : results) {
        out.crossings += r.crossings;
        out.turns += r.turns;
        for (const auto& ev : r.events) {
            if (ev.censored) {
                ++(ev.kind == TransportKind::Flight ? out.censored_flight
                                                    : out.censored_trapping);
            } else if (ev.l >= 1) {
                (ev.kind == TransportKind::Flight ? out.flight : out.trapping).add(ev.l);
            }
        }
    }
    return out;
}

inline void run_pdf(const ExperimentConfig& cfg, unsigned workers, OutputStage& stage,
                    json& derived) {
    const auto out = collect_ode_pdf(cfg, workers);
    stage.add("flight_hist.csv", histogram_csv(out.flight));
    stage.add("trapping_hist.csv", histogram_csv(out.trapping));
    derived = pdf_report(out, cfg.physics);
    stage.add("pdf_report.json", derived.dump(2) + "\n");
}

inline PdfOutcome collect_map_pdf(const ExperimentConfig& cfg, unsigned workers) {
    const auto& mp = cfg.map_pdf;
    const PhysicsConfig& ph = cfg.physics;
    const EnergyH h = ph.energy();
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw RunError("map-pdf: chaotic transport requires 0 < H < 1, got H = " +
                       std::to_string(h.value));
    const JumpAmplitude k = jump_amplitude(ph.lattice(), p_node(h, ph.omega_r));
    if (!(k.value > 0.0)) throw RunError("map-pdf: delta = 0 gives a frozen map");

    const std::size_t per_walker = (mp.events + mp.walkers - 1) / mp.walkers;
    std::vector<PdfOutcome> partial(mp.walkers);
    parallel_for(mp.walkers, workers, [&](std::size_t w) {
        Xoshiro256 rng(derive_seed(cfg.seed, w));
        PdfOutcome& out = partial[w];
        const auto summary =
            walk_events(ph.u0, h, k, per_walker, rng, [&](const TransportEvent& ev) {
                if (ev.censored) {
                    ++(ev.kind == TransportKind::Flight ? out.censored_flight
                                                        : out.censored_trapping);
                } else if (ev.l >= 1) {
                    (ev.kind == TransportKind::Flight ? out.flight : out.trapping).add(ev.l);
                }
            });
        out.crossings = std::size_t(summary.crossings);
        out.turns = std::size_t(summary.turns);
    });
    PdfOutcome out;
    for (const auto& part : partial) {
        out.flight.merge(part.flight);
        out.trapping.merge(part.trapping);
        out.censored_flight += part.censored_flight;
        out.censored_trapping += part.censored_trapping;
        out.crossings += part.crossings;
        out.turns += part.turns;
    }
    return out;
}

inline void run_map_pdf(const ExperimentConfig& cfg, unsigned workers, OutputStage& stage,
                        json& derived) {
    const auto out = collect_map_pdf(cfg, workers);
    stage.add("flight_hist.csv", histogram_csv(out.flight));
    stage.add("trapping_hist.csv", histogram_csv(out.trapping));
    derived = pdf_report(out, cfg.physics);
    stage.add("pdf_report.json", derived.dump(2) + "\n");
}

inline void run_analytic_pdf(const ExperimentConfig& cfg, OutputStage& stage, json& derived) {
    const auto& ap = cfg.analytic_pdf;
    const PhysicsConfig& ph = cfg.physics;
    const EnergyH h = ph.energy();
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw RunError("analytic-pdf: requires 0 < H < 1, got H = " + std::to_string(h.value));
    const NodeMomentum pn = p_node(h, ph.omega_r);
    const JumpAmplitude k = jump_amplitude(ph.lattice(), pn);
    const double diff = diffusion_coefficient(ph.lattice(), pn.value);

    // geometric laws of the large-jump regime
    std::vector<std::pair<long, double>> geo_fl, geo_tr;
    for (long l = 0; l <= std::min<long>(ap.l_max, 2000); ++l) {
        geo_fl.emplace_back(l, pdf_large_jump(l, h, TransportKind::Flight));
        geo_tr.emplace_back(l, pdf_large_jump(l, h, TransportKind::Trapping));
    }
    stage.add("flight_geometric.csv", curve_csv(geo_fl));
    stage.add("trapping_geometric.csv", curve_csv(geo_tr));

    derived = derived_quantities(ph);
    if (diff > 0.0) {
        // near-boundary series and its power-law head
        const double q_fl =
            small_jump_normalization(h, diff, TransportKind::Flight, ap.normalization);
        const double q_tr =
            small_jump_normalization(h, diff, TransportKind::Trapping, ap.normalization);
        std::vector<std::pair<long, double>> fl, tr, head, exit_curve;
        const auto fp = FirstPassageParams::near_boundary(
            0.0, flight_arc_halfwidth(h), diff, ap.epsilon_in_k * k.value);
        for (long l = 1; l <= ap.l_max; ++l) {
            fl.emplace_back(l, pdf_small_jump(l, h, diff, TransportKind::Flight, q_fl));
            tr.emplace_back(l, pdf_small_jump(l, h, diff, TransportKind::Trapping, q_tr));
            head.emplace_back(l, power_law_head(double(l), diff, q_fl));
            exit_curve.emplace_back(l, first_passage_pdf(double(l), fp));
        }
        stage.add("flight_small_jump.csv", curve_csv(fl));
        stage.add("trapping_small_jump.csv", curve_csv(tr));
        stage.add("flight_power_head.csv", curve_csv(head));
        stage.add("flight_exit_series.csv", curve_csv(exit_curve));
        derived["q_flight"] = q_fl;
        derived["q_trapping"] = q_tr;
    }
}

inline ScanInterval run_scan_tree(const ExperimentConfig& cfg, unsigned workers) {
    const auto& fs = cfg.fractal_scan;
    const AtomState base = cfg.physics.state();
    ScanInterval root = scan(fs.delta_lo, fs.delta_hi, fs.resolution, cfg.physics.p0, base,
                             cfg.physics.omega_r, cfg.integrator, fs.tau_max, workers, 0);
    ScanInterval* current = &root;
    for (int level = 1; level < fs.depth; ++level) {
        const auto segments = classify_intervals(*current, fs.window);
        // refine around the widest unresolved segment, or stop
        const ScanSegment* target = nullptr;
        for (const auto& seg : segments)
            if (seg.kind == SegmentKind::Unresolved &&
                (target == nullptr || seg.last - seg.first > target->last - target->first))
                target = &seg;
        if (target == nullptr) break;
        const auto& recs = current->records;
        // center on a censored record if the segment has one
        double center = 0.5 * (recs[target->first].delta + recs[target->last].delta);
        for (std::size_t i = target->first; i <= target->last; ++i)
            if (recs[i].censored) {
                center = recs[i].delta;
                break;
            }
        const double width =
            (current->delta_hi - current->delta_lo) / fs.refine_factor;
        double lo = center - 0.5 * width;
        double hi = center + 0.5 * width;
        lo = std::max(lo, current->delta_lo);
        hi = std::min(hi, current->delta_hi);
        current->children.push_back(scan(lo, hi, fs.resolution, cfg.physics.p0, base,
                                         cfg.physics.omega_r, cfg.integrator, fs.tau_max,
                                         workers, level));
        current = &current->children.back();
    }
    return root;
}

inline json scan_tree_json(const ScanInterval& interval) {
    json node;
    node["delta_lo"] = interval.delta_lo;
    node["delta_hi"] = interval.delta_hi;
    node["level"] = interval.level;
    node["records"] = interval.records.size();
    std::size_t censored = 0;
    for (const auto& rec : interval.records) censored += rec.censored ? 1 : 0;
    node["censored"] = censored;
    json segs = json::array();
    for (const auto& seg : classify_intervals(interval))
        segs.push_back({{"kind", seg.kind == SegmentKind::Smooth ? "smooth" : "unresolved"},
                        {"first", seg.first},
                        {"last", seg.last},
                        {"m", seg.m}});
    node["segments"] = segs;
    node["children"] = json::array();
    for (const auto& child : interval.children)
        node["children"].push_back(scan_tree_json(child));
    return node;
}

inline void run_fractal_scan(const ExperimentConfig& cfg, unsigned workers,
                             OutputStage& stage, json& derived) {
    const auto root = run_scan_tree(cfg, workers);
    stage.add("scan.csv", scan_csv(root));
    stage.add("scan_tree.json", scan_tree_json(root).dump(2) + "\n");
    derived = derived_quantities(cfg.physics);
    try {
        derived["second_order_threshold"] =
            second_order_threshold(cfg.physics.p0, cfg.physics.omega_r, cfg.physics.state());
    } catch (const NoRoot&) {
        derived["second_order_threshold"] = nullptr;
    }
    int depth = 0;
    const ScanInterval* node = &root;
    while (!node->children.empty()) {
        ++depth;
        node = &node->children.front();
    }
    derived["levels"] = depth + 1;
}

}  // namespace experiments

/// Run one experiment and write its outputs plus manifest.json under
/// out_dir. Returns the manifest. On failure a manifest with
/// status = "failed" is still written.
inline json run_experiment(const std::string& kind, const ExperimentConfig& cfg,
                           const std::filesystem::path& out_dir, unsigned workers) {
    json manifest;
    manifest["artifact"] = "latwalk";
#ifdef LATWALK_VERSION
    manifest["version"] = LATWALK_VERSION;
#else
    manifest["version"] = "unknown";
#endif
    manifest["experiment"] = kind;
    manifest["created_utc"] = detail::utc_timestamp();
    manifest["seed"] = cfg.seed;
    manifest["workers"] = workers;
    manifest["config"] = effective_config_json(cfg);

    try {
        OutputStage stage;
        json derived;
        if (kind == "simulate")
            experiments::run_simulate(cfg, stage, derived);
        else if (kind == "lyapunov-map")
            experiments::run_lyapunov_map(cfg, workers, stage, derived);
        else if (kind == "pdf")
            experiments::run_pdf(cfg, workers, stage, derived);
        else if (kind == "map-pdf")
            experiments::run_map_pdf(cfg, workers, stage, derived);
        else if (kind == "analytic-pdf")
            experiments::run_analytic_pdf(cfg, stage, derived);
        else if (kind == "fractal-scan")
            experiments::run_fractal_scan(cfg, workers, stage, derived);
        else
            throw RunError("unknown experiment kind '" + kind + "'");
        manifest["derived"] = derived;
        manifest["outputs"] = stage.flush(out_dir);
        manifest["status"] = "ok";
    } catch (const std::exception& e) {
        manifest["status"] = "failed";
        manifest["error"] = e.what();
        std::filesystem::create_directories(out_dir);
        atomic_write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
        throw;
    }
    atomic_write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

/// Manifest comparison for determinism checks: everything except the
/// run-environment fields (timestamp, worker count) must match; neither
/// influences a single output byte.
inline bool manifests_equal_modulo_timestamp(json a, json b) {
    for (const char* key : {"created_utc", "workers"}) {
        a.erase(key);
        b.erase(key);
    }
    return a == b;
}

}  // namespace latwalk
