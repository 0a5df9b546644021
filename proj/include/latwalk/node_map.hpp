// The node-crossing map for the synchronized dipole component u: between
// crossings of the standing-wave nodes u is nearly frozen; at each crossing
// it jumps. The jump of theta = arcsin u has deterministic harmonic
// asymptotics, and treating its phase as random gives the stochastic map
//   theta_m = theta_{m-1} + K sin(phi_m),   K = |Delta| sqrt(pi / (w_r p_n)),
// a random walk on the unit circle. The walk plus the turn rule
// (-1)^(m+1) u_m > H reproduces the flight/trapping statistics of the full
// system, so large ensembles can skip the ODE entirely (walk_events), while
// integrate_reduced realizes the reduced equations of motion with the same
// event machinery as the full integrator.
#pragma once

#include "dynamics.hpp"
#include "integrator.hpp"
#include "rng.hpp"
#include "transport_stats.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace latwalk {

/// Momentum magnitude at node crossings, identical at every node for a given
/// energy: p_n = sqrt(2H / w_r). Requires H > 0 (otherwise no node is ever
/// reached).
struct NodeMomentum {
    double value = 0.0;
};

inline NodeMomentum p_node(EnergyH h, double omega_r) {
    if (!(h.value > 0.0))
        throw std::domain_error("p_node: requires H > 0, the atom never reaches a node");
    if (!(omega_r > 0.0)) throw std::domain_error("p_node: omega_r must be positive");
    return NodeMomentum{std::sqrt(2.0 * h.value / omega_r)};
}

/// Angular jump scale K = |Delta| sqrt(pi / (w_r p_n)). K >= pi/2 is the
/// large-jump regime; K much below the arc widths is diffusive.
struct JumpAmplitude {
    double value = 0.0;
};

inline JumpAmplitude jump_amplitude(const LatticeParams& params, NodeMomentum pn) {
    if (!(pn.value > 0.0)) throw std::domain_error("jump_amplitude: invalid node momentum");
    return JumpAmplitude{std::abs(params.delta) *
                         std::sqrt(std::numbers::pi / (params.omega_r * pn.value))};
}

/// State of the map: crossing count m and the walker angle on the full
/// circle. u_m = sin(angle) is the physical value; theta_m = arcsin(u_m)
/// folds the angle back to [-pi/2, pi/2].
struct MapState {
    long m = 0;
    double angle = 0.0;

    static MapState from_u0(double u0) {
        if (std::abs(u0) > 1.0)
            throw std::domain_error("MapState: |u0| must not exceed 1");
        return MapState{0, std::asin(u0)};
    }

    double u() const { return std::sin(angle); }
    double theta() const { return std::asin(u()); }
};

/// One application of the stochastic map with explicit phase phi in [0, 2pi).
inline MapState stochastic_jump(MapState state, JumpAmplitude k, double phi) {
    state.angle += k.value * std::sin(phi);
    // keep the circle coordinate bounded over long walks
    const double two_pi = 2.0 * std::numbers::pi;
    if (state.angle >= two_pi || state.angle < 0.0)
        state.angle -= two_pi * std::floor(state.angle / two_pi);
    ++state.m;
    return state;
}

/// Deterministic jump of u across one node, the large-argument asymptotics
/// of the exact crossing integral:
///   theta_1 = theta_0 +- Delta/sqrt(1-u0^2) *
///             [ sqrt(pi/(w_r p_n)) (v0 cos A - z0 sin A) (- z0) ],
/// with A = 2/(w_r p_n) - pi/4. The bare z0 term inside the bracket is small
/// against the sqrt factor and dropped by default, exactly as the stochastic
/// map drops it; keep_z_term retains it for validation against the ODE.
inline double deterministic_jump(double u_prev, double v_prev, double z_prev,
                                 const LatticeParams& params, NodeMomentum pn,
                                 int branch, bool keep_z_term = false) {
    if (std::abs(u_prev) >= 1.0)
        throw std::domain_error("deterministic_jump: |u| = 1 is outside the map's domain");
    if (branch != 1 && branch != -1)
        throw std::invalid_argument("deterministic_jump: branch must be +1 or -1");
    const double root = std::sqrt(1.0 - u_prev * u_prev);
    const double arg = 2.0 / (params.omega_r * pn.value) - 0.25 * std::numbers::pi;
    double bracket = std::sqrt(std::numbers::pi / (params.omega_r * pn.value)) *
                     (v_prev * std::cos(arg) - z_prev * std::sin(arg));
    if (keep_z_term) bracket -= z_prev;
    const double theta1 = std::asin(u_prev) + double(branch) * params.delta / root * bracket;
    return std::sin(theta1);
}

enum class CrossingOutcome { Continue, Turn, SeparatrixLike };

/// Outcome of the m-th crossing: the atom keeps its direction when
/// (-1)^(m+1) u_m < H, turns when the inequality is reversed, and starts
/// separatrix-like motion at equality (1e-12 band). Even m has cos x > 0 on
/// the following interval, odd m has cos x < 0, which is where the parity
/// factor comes from.
inline CrossingOutcome classify_crossing(double u_m, long m, EnergyH h) {
    const double signed_u = (m % 2 != 0) ? u_m : -u_m;
    if (std::abs(signed_u - h.value) < 1e-12) return CrossingOutcome::SeparatrixLike;
    return signed_u < h.value ? CrossingOutcome::Continue : CrossingOutcome::Turn;
}

enum class TransportRegime { LargeJump, SmallJumpDiffusive, SmallJumpBoundary };

/// Regime of the transport statistics. Thresholds: large jumps at
/// K >= pi/2; diffusive when K is below 20% of both arc half-widths;
/// boundary otherwise.
inline TransportRegime regime_classify(JumpAmplitude k, EnergyH h) {
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw std::domain_error("regime_classify: H must lie in (0, 1)");
    if (k.value >= 0.5 * std::numbers::pi) return TransportRegime::LargeJump;
    const double smallest_arc =
        std::min(flight_arc_halfwidth(h), trapping_arc_halfwidth(h));
    if (k.value <= 0.2 * smallest_arc) return TransportRegime::SmallJumpDiffusive;
    return TransportRegime::SmallJumpBoundary;
}

/// Per-kind validity of the diffusive small-jump PDF (the overall regime can
/// be boundary for one arc and diffusive for the other).
inline bool diffusive_for(TransportKind kind, JumpAmplitude k, EnergyH h) {
    const double arc = kind == TransportKind::Flight ? flight_arc_halfwidth(h)
                                                     : trapping_arc_halfwidth(h);
    return k.value <= 0.2 * arc;
}

/// Sample of the reduced system: piecewise-frozen u between crossings.
struct ReducedSample {
    double tau = 0.0;
    double x = 0.0;
    double p = 0.0;
    double u_m = 0.0;
    long m = 0;
};

struct ReducedTrajectory {
    LatticeParams params;
    double h_energy = 0.0;      ///< w_r p^2/2 - u_m cos x, invariant of the reduced flow
    double p_node_value = 0.0;
    double jump_amplitude = 0.0;
    std::vector<ReducedSample> samples;
    std::vector<CrossingEvent> crossings;  ///< u,v,z fields hold (u_m after jump, 0, 0)
    std::vector<TurningEvent> turns;
    ReducedSample final_state;
    std::size_t steps = 0;
};

namespace detail {

struct ReducedOde {
    double omega_r;
    const double* u_current;
    void operator()(double, const std::array<double, 2>& y,
                    std::array<double, 2>& dydt) const {
        dydt[0] = omega_r * y[1];
        dydt[1] = -(*u_current) * std::sin(y[0]);
    }
};

template <class Stepper>
ReducedTrajectory integrate_reduced_impl(Stepper& stepper, double x0, double p0,
                                         MapState map_state, const LatticeParams& params,
                                         const IntegratorConfig& cfg, double tau_max,
                                         Xoshiro256& rng, double& u_current,
                                         const NodeMomentum& pn, const JumpAmplitude& k) {
    ReducedTrajectory traj;
    traj.params = params;
    traj.h_energy = 0.5 * params.omega_r * p0 * p0 - u_current * std::cos(x0);
    traj.p_node_value = pn.value;
    traj.jump_amplitude = k.value;

    stepper.start(0.0, {x0, p0});

    traj.samples.push_back(ReducedSample{0.0, x0, p0, u_current, map_state.m});
    int cos_sign = detail::sign_of(std::cos(x0), 1);
    int p_sign = detail::sign_of(p0, 1);
    long steps_since_sample = 0;
    double last_crossing_tau = -1.0;

    const double guard = 10.0 * cfg.event_tol;
    while (stepper.time() < tau_max) {
        stepper.step_to(tau_max);
        const double tau = stepper.time();
        const auto& y = stepper.state();

        // localize both candidate events, then handle them in tau order: a
        // crossing restarts the stepper with the new u, so a later turn in
        // the same step must be discarded (it is re-detected after restart)
        double tau_turn = std::numeric_limits<double>::infinity();
        const int p_sign_end = detail::sign_of(y[1], p_sign);
        if (p_sign_end != p_sign) {
            auto f = [&](double t) { return stepper.dense(t)[1]; };
            tau_turn = bisect_root(f, stepper.segment_begin(), stepper.segment_end(),
                                   double(p_sign), cfg.event_tol);
        }
        double tau_cross = std::numeric_limits<double>::infinity();
        const int cos_sign_end = detail::sign_of(std::cos(y[0]), cos_sign);
        if (cos_sign_end != cos_sign &&
            stepper.segment_end() > last_crossing_tau + guard) {
            auto f = [&](double t) { return std::cos(stepper.dense(t)[0]); };
            tau_cross = bisect_root(f, stepper.segment_begin(), stepper.segment_end(),
                                    double(cos_sign), cfg.event_tol);
        }

        if (tau_turn < tau_cross) {
            traj.turns.push_back(TurningEvent{tau_turn, stepper.dense(tau_turn)[0]});
            p_sign = p_sign_end;
        }
        if (std::isfinite(tau_cross)) {
            const auto ye = stepper.dense(tau_cross);
            map_state = stochastic_jump(map_state, k, rng.uniform_phase());
            u_current = map_state.u();
            traj.crossings.push_back(CrossingEvent{
                map_state.m, tau_cross, ye[0], ye[1],
                map_state.m % 2 == 0 ? Parity::Even : Parity::Odd, u_current, 0.0, 0.0});
            cos_sign = cos_sign_end;
            last_crossing_tau = tau_cross;
            // u changed: restart the stepper from the crossing point
            stepper.start(tau_cross, ye);
            p_sign = detail::sign_of(ye[1], p_sign);
            continue;
        }

        if (cfg.sample_stride > 0 && ++steps_since_sample >= cfg.sample_stride &&
            tau < tau_max) {
            traj.samples.push_back(
                ReducedSample{tau, y[0], y[1], u_current, map_state.m});
            steps_since_sample = 0;
        }
    }

    traj.final_state = ReducedSample{stepper.time(), stepper.state()[0],
                                     stepper.state()[1], u_current, map_state.m};
    traj.samples.push_back(traj.final_state);
    traj.steps = stepper.accepted_steps();
    return traj;
}

}  // namespace detail

/// Integrate the reduced equations of motion x' = w_r p, p' = -u_m sin x,
/// applying the stochastic map at every node crossing (the crossing counter
/// realized by event detection on cos x = 0). Phases come from the supplied
/// generator, so the run is reproducible given the seed.
inline ReducedTrajectory integrate_reduced(double x0, double p0, MapState map_state,
                                           const LatticeParams& params,
                                           const IntegratorConfig& cfg, double tau_max,
                                           Xoshiro256& rng) {
    validate(params);
    validate(cfg);
    if (!(tau_max > 0.0))
        throw std::invalid_argument("integrate_reduced: tau_max must be positive");

    double u_current = map_state.u();
    const double h_energy = 0.5 * params.omega_r * p0 * p0 - u_current * std::cos(x0);
    const NodeMomentum pn = p_node(EnergyH{h_energy}, params.omega_r);
    const JumpAmplitude k = jump_amplitude(params, pn);

    detail::ReducedOde ode{params.omega_r, &u_current};
    return with_stepper<2>(ode, cfg, [&](auto& stepper) {
        return detail::integrate_reduced_impl(stepper, x0, p0, map_state, params, cfg,
                                              tau_max, rng, u_current, pn, k);
    });
}

/// Statistics of one walker ensemble member.
struct WalkSummary {
    long crossings = 0;
    long turns = 0;
};

/// Drive the bare circle walk without the ODE: each step is one node
/// crossing, turns follow from the parity rule. Emits completed transport
/// events into the segmenter until n_events complete (non-censored) events
/// have been produced. Statistically equivalent to integrate_reduced, at a
/// cost per crossing of one RNG draw and a sine.
template <class EventSink>
WalkSummary walk_events(double u0, EnergyH h, JumpAmplitude k, std::size_t n_events,
                        Xoshiro256& rng, EventSink&& sink) {
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw std::domain_error("walk_events: H must lie in (0, 1) for transport statistics");
    if (!(k.value > 0.0))
        throw std::domain_error("walk_events: K must be positive, the K = 0 map never turns");
    MapState state = MapState::from_u0(u0);
    WalkSummary summary;
    std::size_t completed = 0;
    EventSegmenter segmenter(0.0, [&](const TransportEvent& ev) {
        if (!ev.censored) ++completed;
        sink(ev);
    });
    while (completed < n_events) {
        state = stochastic_jump(state, k, rng.uniform_phase());
        ++summary.crossings;
        segmenter.on_crossing(double(state.m));
        // SeparatrixLike sits on a measure-zero boundary; treat it as a turn.
        if (classify_crossing(state.u(), state.m, h) != CrossingOutcome::Continue) {
            ++summary.turns;
            segmenter.on_turn(double(state.m) + 0.5);
        }
    }
    return summary;
}

}  // namespace latwalk
