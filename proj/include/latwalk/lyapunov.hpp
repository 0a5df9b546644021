// Maximum Lyapunov exponent by the two-trajectory method: a shadow state
// displaced by d0 in x, both integrated side by side, with the separation
// renormalized back to d0 at fixed intervals. lambda is the mean log growth
// per unit time over the epochs after an initial transient. Distances are
// plain Euclidean in (x, p, u, v, z).
#pragma once

#include "dynamics.hpp"
#include "integrator.hpp"
#include "parallel.hpp"
#include "sha256.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace latwalk {

struct LyapunovConfig {
    double d0 = 1e-8;              ///< initial separation, in x
    double renorm_interval = 50.0; ///< tau between renormalizations
    double tau_max = 1e5;
    double transient_skip = -1.0;  ///< tau excluded from the average; < 0 means 10% of tau_max
    IntegratorConfig integrator{Scheme::Dop853, 1e-10, 1e-10, 50.0, 1e-9, 0.0, 0};

    double effective_transient() const {
        return transient_skip >= 0.0 ? transient_skip : 0.1 * tau_max;
    }
};

inline void validate(const LyapunovConfig& cfg) {
    if (!(cfg.d0 > 0.0) || cfg.d0 >= 1.0)
        throw std::invalid_argument("LyapunovConfig: need 0 < d0 << 1");
    if (!(cfg.renorm_interval > 0.0))
        throw std::invalid_argument("LyapunovConfig: renorm_interval must be positive");
    if (!(cfg.tau_max > cfg.effective_transient()))
        throw std::invalid_argument("LyapunovConfig: tau_max must exceed transient_skip");
    validate(cfg.integrator);
}

struct LyapunovEstimate {
    double lambda = 0.0;
    double std_error = 0.0;
    long epochs = 0;
};

namespace detail {

template <class Stepper>
LyapunovEstimate max_lyapunov_impl(Stepper& ref, Stepper& shadow, const AtomState& s0,
                                   const LyapunovConfig& cfg) {
    using Y = std::array<double, 5>;
    const Y y0{s0.x, s0.p, s0.u, s0.v, s0.z};
    Y y0_shadow = y0;
    y0_shadow[0] += cfg.d0;
    ref.start(s0.tau, y0);
    shadow.start(s0.tau, y0_shadow);

    const double tau_end = s0.tau + cfg.tau_max;
    const double transient_end = s0.tau + cfg.effective_transient();

    double sum = 0.0, sum_sq = 0.0;
    long epochs = 0;
    double t_checkpoint = s0.tau;
    while (t_checkpoint < tau_end) {
        t_checkpoint = std::min(t_checkpoint + cfg.renorm_interval, tau_end);
        while (ref.time() < t_checkpoint) ref.step_to(t_checkpoint);
        while (shadow.time() < t_checkpoint) shadow.step_to(t_checkpoint);

        const Y& a = ref.state();
        Y b = shadow.state();
        double dist_sq = 0.0;
        for (int i = 0; i < 5; ++i) dist_sq += (b[i] - a[i]) * (b[i] - a[i]);
        const double dist = std::sqrt(dist_sq);
        if (!(dist > 0.0))
            throw StepFailure(t_checkpoint);  // shadow collapsed onto the reference

        if (t_checkpoint > transient_end) {
            const double rate = std::log(dist / cfg.d0) / cfg.renorm_interval;
            sum += rate;
            sum_sq += rate * rate;
            ++epochs;
        }
        const double scale = cfg.d0 / dist;
        for (int i = 0; i < 5; ++i) b[i] = a[i] + (b[i] - a[i]) * scale;
        shadow.start(t_checkpoint, b);
    }

    LyapunovEstimate est;
    est.epochs = epochs;
    if (epochs > 0) est.lambda = sum / double(epochs);
    if (epochs > 1) {
        const double var = (sum_sq - sum * sum / double(epochs)) / double(epochs - 1);
        est.std_error = std::sqrt(std::max(var, 0.0) / double(epochs));
    }
    return est;
}

}  // namespace detail

/// Largest Lyapunov exponent of the atom system from the initial state s0.
inline LyapunovEstimate max_lyapunov(const AtomState& s0, const LatticeParams& params,
                                     const LyapunovConfig& cfg) {
    validate(params);
    validate(cfg);
    validate_initial(s0);
    if (cfg.integrator.scheme == Scheme::Dopri5) {
        Dopri5<5, AtomOde> ref(AtomOde{params}, cfg.integrator);
        Dopri5<5, AtomOde> shadow(AtomOde{params}, cfg.integrator);
        return detail::max_lyapunov_impl(ref, shadow, s0, cfg);
    }
    Dop853<5, AtomOde> ref(AtomOde{params}, cfg.integrator);
    Dop853<5, AtomOde> shadow(AtomOde{params}, cfg.integrator);
    return detail::max_lyapunov_impl(ref, shadow, s0, cfg);
}

enum class CellStatus { Ok, Failed };

struct LambdaCell {
    double lambda = 0.0;
    double std_error = 0.0;
    CellStatus status = CellStatus::Ok;
    std::string failure;
};

/// Grid of lambda estimates over the (Delta, p0) plane at fixed initial
/// Bloch conditions. Cells are independent tasks; failed cells are recorded
/// with the reason, never interpolated.
struct LambdaGrid {
    std::vector<double> delta_axis;
    std::vector<double> p0_axis;
    std::vector<LambdaCell> cells;  ///< row-major, delta index slow
    AtomState base_state;
    double omega_r = 1e-5;
    std::uint64_t seed = 0;
    LyapunovConfig config;

    const LambdaCell& at(std::size_t i_delta, std::size_t j_p0) const {
        return cells[i_delta * p0_axis.size() + j_p0];
    }
};

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n < 1) throw std::invalid_argument("linspace: need at least one sample");
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i)
        xs[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
    return xs;
}

/// Fill a lambda map cell by cell in parallel. base_state supplies x0 and
/// the Bloch triplet; p0 is overridden per cell. Deterministic for a given
/// seed and worker count.
inline LambdaGrid lambda_map(const std::vector<double>& delta_axis,
                             const std::vector<double>& p0_axis, const AtomState& base_state,
                             double omega_r, const LyapunovConfig& cfg,
                             std::uint64_t seed = 0, unsigned workers = 1) {
    if (delta_axis.empty() || p0_axis.empty())
        throw std::invalid_argument("lambda_map: axes must be non-empty");
    validate(cfg);
    LambdaGrid grid;
    grid.delta_axis = delta_axis;
    grid.p0_axis = p0_axis;
    grid.base_state = base_state;
    grid.omega_r = omega_r;
    grid.seed = seed;
    grid.config = cfg;
    grid.cells.resize(delta_axis.size() * p0_axis.size());

    parallel_for(grid.cells.size(), workers, [&](std::size_t idx) {
        const std::size_t i = idx / p0_axis.size();
        const std::size_t j = idx % p0_axis.size();
        // reserved for stochastic variants; the estimator itself is deterministic
        (void)derive_seed(seed, idx);
        LatticeParams params{omega_r, delta_axis[i]};
        AtomState s0 = base_state;
        s0.p = p0_axis[j];
        LambdaCell cell;
        try {
            const auto est = max_lyapunov(s0, params, cfg);
            cell.lambda = est.lambda;
            cell.std_error = est.std_error;
        } catch (const std::exception& e) {
            cell.status = CellStatus::Failed;
            cell.failure = e.what();
        }
        grid.cells[idx] = cell;
    });
    return grid;
}

}  // namespace latwalk
