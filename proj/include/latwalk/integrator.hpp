// Time integration of the atom equations of motion with event localization
// and invariant-drift monitoring. Two adaptive embedded Runge-Kutta pairs
// with dense output are provided: Dormand-Prince 8(5,3) (default) and
// Dormand-Prince 5(4) as an independent cross-check.
//
// Events are found by tracking the sign of cos x (node crossings) and of p
// (turning points) across accepted steps and bisecting the dense-output
// polynomial inside a bracketing step. Between two node crossings the atom
// travels a distance pi, and between two turns at least one node crossing
// occurs, so with max_step bounded both signs change at most once per step.
#pragma once

#include "dop853.hpp"
#include "dynamics.hpp"
#include "stepping.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace latwalk {

/// Dormand-Prince 5(4) with the Shampine dense-output interpolant and FSAL.
/// System is a callable void(double t, const Y&, Y&) filling derivatives.
template <std::size_t N, class System>
class Dopri5 {
public:
    using Y = std::array<double, N>;

    Dopri5(System system, IntegratorConfig cfg) : sys_(std::move(system)), cfg_(cfg) {
        validate(cfg);
    }

    void start(double t0, const Y& y0) {
        t_ = t0;
        y_ = y0;
        sys_(t_, y_, k1_);
        h_next_ = cfg_.fixed_step > 0.0 ? cfg_.fixed_step : initial_step();
        seg_t0_ = seg_t1_ = t0;
    }

    double time() const { return t_; }
    const Y& state() const { return y_; }
    std::size_t accepted_steps() const { return accepted_; }
    double segment_begin() const { return seg_t0_; }
    double segment_end() const { return seg_t1_; }

    /// Advance exactly one accepted step, without passing t_limit.
    double step_to(double t_limit) {
        const double h_min = 16.0 * std::numeric_limits<double>::epsilon() *
                             std::max(1.0, std::abs(t_));
        for (int attempt = 0; attempt < 400; ++attempt) {
            double h = std::min(h_next_, cfg_.max_step);
            const bool clamped = t_ + h >= t_limit;
            if (clamped) h = t_limit - t_;
            if (!(h > 0.0)) throw StepFailure(t_);

            const double err = try_step(h);
            const bool accept = cfg_.fixed_step > 0.0 || err <= 1.0;
            const double fac =
                err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
            if (accept) {
                prepare_dense(h);
                seg_t0_ = t_;
                seg_t1_ = clamped ? t_limit : t_ + h;
                t_ = seg_t1_;
                y_ = y_new_;
                k1_ = k7_;
                ++accepted_;
                if (!clamped && cfg_.fixed_step == 0.0)
                    h_next_ = std::min(h * fac, cfg_.max_step);
                return t_;
            }
            h_next_ = h * std::min(fac, 1.0);
            if (h_next_ < h_min) throw StepFailure(t_);
        }
        throw StepFailure(t_);
    }

    /// Interpolated state anywhere inside the last accepted step.
    Y dense(double t) const {
        const double h = seg_t1_ - seg_t0_;
        const double s = h != 0.0 ? (t - seg_t0_) / h : 0.0;
        const double s1 = 1.0 - s;
        Y out;
        for (std::size_t i = 0; i < N; ++i)
            out[i] = rcont1_[i] +
                     s * (rcont2_[i] + s1 * (rcont3_[i] + s * (rcont4_[i] + s1 * rcont5_[i])));
        return out;
    }

private:
    // Butcher tableau (Dormand & Prince 1980), error and dense coefficients
    // as in Hairer, Norsett & Wanner.
    static constexpr double A21 = 1.0 / 5.0;
    static constexpr double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0;
    static constexpr double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0;
    static constexpr double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0,
                            A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0;
    static constexpr double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0,
                            A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0,
                            A65 = -5103.0 / 18656.0;
    static constexpr double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0,
                            B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0;
    static constexpr double C2 = 1.0 / 5.0, C3 = 3.0 / 10.0, C4 = 4.0 / 5.0, C5 = 8.0 / 9.0;
    static constexpr double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0,
                            E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0;
    static constexpr double D1 = -12715105075.0 / 11282082432.0;
    static constexpr double D3 = 87487479700.0 / 32700410799.0;
    static constexpr double D4 = -10690763975.0 / 1880347072.0;
    static constexpr double D5 = 701980252875.0 / 199316789632.0;
    static constexpr double D6 = -1453857185.0 / 822651844.0;
    static constexpr double D7 = 69997945.0 / 29380423.0;

    double try_step(double h) {
        Y w;
        for (std::size_t i = 0; i < N; ++i) w[i] = y_[i] + h * A21 * k1_[i];
        sys_(t_ + C2 * h, w, k2_);
        for (std::size_t i = 0; i < N; ++i)
            w[i] = y_[i] + h * (A31 * k1_[i] + A32 * k2_[i]);
        sys_(t_ + C3 * h, w, k3_);
        for (std::size_t i = 0; i < N; ++i)
            w[i] = y_[i] + h * (A41 * k1_[i] + A42 * k2_[i] + A43 * k3_[i]);
        sys_(t_ + C4 * h, w, k4_);
        for (std::size_t i = 0; i < N; ++i)
            w[i] = y_[i] + h * (A51 * k1_[i] + A52 * k2_[i] + A53 * k3_[i] + A54 * k4_[i]);
        sys_(t_ + C5 * h, w, k5_);
        for (std::size_t i = 0; i < N; ++i)
            w[i] = y_[i] + h * (A61 * k1_[i] + A62 * k2_[i] + A63 * k3_[i] + A64 * k4_[i] +
                                A65 * k5_[i]);
        sys_(t_ + h, w, k6_);
        for (std::size_t i = 0; i < N; ++i)
            y_new_[i] = y_[i] + h * (B1 * k1_[i] + B3 * k3_[i] + B4 * k4_[i] + B5 * k5_[i] +
                                     B6 * k6_[i]);
        sys_(t_ + h, y_new_, k7_);

        double err_sq = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double herr = h * (E1 * k1_[i] + E3 * k3_[i] + E4 * k4_[i] + E5 * k5_[i] +
                                     E6 * k6_[i] + E7 * k7_[i]);
            const double scale =
                cfg_.abs_tol + cfg_.rel_tol * std::max(std::abs(y_[i]), std::abs(y_new_[i]));
            err_sq += (herr / scale) * (herr / scale);
        }
        return std::sqrt(err_sq / double(N));
    }

    void prepare_dense(double h) {
        for (std::size_t i = 0; i < N; ++i) {
            const double ydiff = y_new_[i] - y_[i];
            const double bspl = h * k1_[i] - ydiff;
            rcont1_[i] = y_[i];
            rcont2_[i] = ydiff;
            rcont3_[i] = bspl;
            rcont4_[i] = ydiff - h * k7_[i] - bspl;
            rcont5_[i] = h * (D1 * k1_[i] + D3 * k3_[i] + D4 * k4_[i] + D5 * k5_[i] +
                              D6 * k6_[i] + D7 * k7_[i]);
        }
    }

    /// Starting step size, Hairer's hinit heuristic.
    double initial_step() const {
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double scale = cfg_.abs_tol + cfg_.rel_tol * std::abs(y_[i]);
            d0 += (y_[i] / scale) * (y_[i] / scale);
            d1 += (k1_[i] / scale) * (k1_[i] / scale);
        }
        d0 = std::sqrt(d0 / double(N));
        d1 = std::sqrt(d1 / double(N));
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, cfg_.max_step);

        Y y1, f1;
        for (std::size_t i = 0; i < N; ++i) y1[i] = y_[i] + h0 * k1_[i];
        sys_(t_ + h0, y1, f1);
        double d2 = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double scale = cfg_.abs_tol + cfg_.rel_tol * std::abs(y_[i]);
            d2 += ((f1[i] - k1_[i]) / scale) * ((f1[i] - k1_[i]) / scale);
        }
        d2 = std::sqrt(d2 / double(N)) / h0;
        const double dm = std::max(d1, d2);
        const double h1 = dm > 1e-15 ? std::pow(0.01 / dm, 0.2) : std::max(1e-6, h0 * 1e-3);
        return std::min({100.0 * h0, h1, cfg_.max_step});
    }

    System sys_;
    IntegratorConfig cfg_;
    double t_ = 0.0;
    double h_next_ = 0.0;
    double seg_t0_ = 0.0, seg_t1_ = 0.0;
    std::size_t accepted_ = 0;
    Y y_{}, y_new_{};
    Y k1_{}, k2_{}, k3_{}, k4_{}, k5_{}, k6_{}, k7_{};
    Y rcont1_{}, rcont2_{}, rcont3_{}, rcont4_{}, rcont5_{};
};

/// Run fn with a freshly constructed stepper of the configured scheme.
template <std::size_t N, class System, class Fn>
decltype(auto) with_stepper(System system, const IntegratorConfig& cfg, Fn&& fn) {
    if (cfg.scheme == Scheme::Dopri5) {
        Dopri5<N, System> stepper(std::move(system), cfg);
        return fn(stepper);
    }
    Dop853<N, System> stepper(std::move(system), cfg);
    return fn(stepper);
}

enum class EventKind { NodeCrossing, Turn };
enum class Parity { Even, Odd };

/// Node crossing: the moment cos x = 0. m counts every crossing from 1,
/// including repeated crossings of the same node; even m means cos x > 0 on
/// the following interval when the trajectory starts with cos x0 > 0.
struct CrossingEvent {
    long m = 0;
    double tau = 0.0;
    double x_node = 0.0;
    double p_at_node = 0.0;
    Parity parity = Parity::Odd;
    double u = 0.0, v = 0.0, z = 0.0;  ///< Bloch vector at the crossing
};

/// Sign change of the momentum.
struct TurningEvent {
    double tau = 0.0;
    double x = 0.0;
};

struct DriftStats {
    double max_abs_dh = 0.0;
    double max_abs_dnorm = 0.0;
};

struct Trajectory {
    LatticeParams params;
    AtomState initial;
    AtomState final_state;
    std::vector<AtomState> samples;  ///< strictly increasing in tau
    std::vector<CrossingEvent> crossings;
    std::vector<TurningEvent> turns;
    DriftStats drift;  ///< maxima over every accepted step
    std::size_t steps = 0;
};

/// ODE right-hand side adapter for the 5-dimensional atom system,
/// y = (x, p, u, v, z).
struct AtomOde {
    LatticeParams params;
    void operator()(double, const std::array<double, 5>& y,
                    std::array<double, 5>& dydt) const {
        const AtomState s{0.0, y[0], y[1], y[2], y[3], y[4]};
        const StateDerivative d = derivatives(s, params);
        dydt = {d.dx, d.dp, d.du, d.dv, d.dz};
    }
};

namespace detail {

inline int sign_of(double value, int fallback) {
    if (value > 0.0) return 1;
    if (value < 0.0) return -1;
    return fallback;
}

inline AtomState to_state(double tau, const std::array<double, 5>& y) {
    return AtomState{tau, y[0], y[1], y[2], y[3], y[4]};
}

template <class Stepper>
Trajectory integrate_impl(Stepper& stepper, const AtomState& s0,
                          const LatticeParams& params, const IntegratorConfig& cfg,
                          double tau_max) {
    Trajectory traj;
    traj.params = params;
    traj.initial = s0;

    stepper.start(s0.tau, {s0.x, s0.p, s0.u, s0.v, s0.z});
    const double tau_end = s0.tau + tau_max;

    const double h0 = total_energy(s0, params).value;
    const double norm0 = bloch_norm(s0);
    traj.drift.max_abs_dnorm = std::abs(norm0 - 1.0);
    traj.samples.push_back(s0);

    int cos_sign = sign_of(std::cos(s0.x), 1);
    int p_sign = sign_of(s0.p, 1);
    long crossing_count = 0;
    long steps_since_sample = 0;

    while (stepper.time() < tau_end) {
        stepper.step_to(tau_end);
        const auto& y = stepper.state();
        const double tau = stepper.time();

        const double cos_end = std::cos(y[0]);
        const int cos_sign_end = sign_of(cos_end, cos_sign);
        if (cos_sign_end != cos_sign) {
            auto f = [&](double t) { return std::cos(stepper.dense(t)[0]); };
            const double tau_star =
                bisect_root(f, stepper.segment_begin(), stepper.segment_end(),
                            double(cos_sign), cfg.event_tol);
            const auto ye = stepper.dense(tau_star);
            ++crossing_count;
            traj.crossings.push_back(CrossingEvent{
                crossing_count, tau_star, ye[0], ye[1],
                crossing_count % 2 == 0 ? Parity::Even : Parity::Odd, ye[2], ye[3], ye[4]});
            cos_sign = cos_sign_end;
        }

        const int p_sign_end = sign_of(y[1], p_sign);
        if (p_sign_end != p_sign) {
            auto f = [&](double t) { return stepper.dense(t)[1]; };
            const double tau_star =
                bisect_root(f, stepper.segment_begin(), stepper.segment_end(),
                            double(p_sign), cfg.event_tol);
            const auto ye = stepper.dense(tau_star);
            traj.turns.push_back(TurningEvent{tau_star, ye[0]});
            p_sign = p_sign_end;
        }

        const AtomState s = to_state(tau, y);
        traj.drift.max_abs_dh =
            std::max(traj.drift.max_abs_dh, std::abs(total_energy(s, params).value - h0));
        traj.drift.max_abs_dnorm =
            std::max(traj.drift.max_abs_dnorm, std::abs(bloch_norm(s) - norm0));

        if (cfg.sample_stride > 0 && ++steps_since_sample >= cfg.sample_stride &&
            tau < tau_end) {
            traj.samples.push_back(s);
            steps_since_sample = 0;
        }
    }

    traj.final_state = to_state(stepper.time(), stepper.state());
    traj.samples.push_back(traj.final_state);
    traj.steps = stepper.accepted_steps();
    return traj;
}

}  // namespace detail

/// Roots of cos x (crossings) or p (turns) inside the stepper's last
/// accepted step, refined to event_tol.
template <class Stepper>
std::vector<double> locate_events(const Stepper& stepper, EventKind kind,
                                  double event_tol) {
    auto f = [&](double t) {
        const auto y = stepper.dense(t);
        return kind == EventKind::NodeCrossing ? std::cos(y[0]) : y[1];
    };
    return find_sign_changes(f, stepper.segment_begin(), stepper.segment_end(), event_tol);
}

/// Integrate the atom system over [s0.tau, s0.tau + tau_max], localizing
/// node crossings and turning points and monitoring the drift of the two
/// invariants at every accepted step.
inline Trajectory integrate(const AtomState& s0, const LatticeParams& params,
                            const IntegratorConfig& cfg, double tau_max) {
    validate(params);
    validate(cfg);
    validate_initial(s0);
    if (!(tau_max > 0.0)) throw std::invalid_argument("integrate: tau_max must be positive");
    return with_stepper<5>(AtomOde{params}, cfg, [&](auto& stepper) {
        return detail::integrate_impl(stepper, s0, params, cfg, tau_max);
    });
}

/// Maxima over the stored samples of |H(tau) - H(0)| and |norm(tau) - 1|.
/// The DriftStats member of Trajectory is the stricter every-step version.
inline std::pair<double, double> invariant_drift(const Trajectory& traj) {
    if (traj.samples.empty())
        throw std::invalid_argument("invariant_drift: trajectory has no samples");
    const double h0 = total_energy(traj.samples.front(), traj.params).value;
    double max_dh = 0.0, max_dnorm = 0.0;
    for (const auto& s : traj.samples) {
        max_dh = std::max(max_dh, std::abs(total_energy(s, traj.params).value - h0));
        max_dnorm = std::max(max_dnorm, std::abs(bloch_norm(s) - 1.0));
    }
    return {max_dh, max_dnorm};
}

}  // namespace latwalk
