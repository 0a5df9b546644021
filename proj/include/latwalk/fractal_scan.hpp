// Exit-time experiments: atoms start at x0 = 0 with p0 > 0 and the run ends
// when the trajectory crosses a border node at x = -pi/2 or x = 3pi/2; m
// counts crossings of the central node at x = pi/2 on the way. T(Delta) is
// fractal-like: smooth intervals of constant m alternate with structure that
// never resolves under magnification, with infinite (censored) exit times at
// the boundaries. The analytic structure-order conditions tell where the
// first- and second-order singular structures can appear.
#pragma once

#include "dynamics.hpp"
#include "integrator.hpp"
#include "node_map.hpp"
#include "parallel.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

namespace latwalk {

enum class ExitSide { None, Left, Right };

struct ExitTimeRecord {
    double delta = 0.0;
    double exit_time = 0.0;  ///< tau of the border crossing; tau_max if censored
    bool censored = false;
    long m = 0;              ///< central-node crossings at x = pi/2 before exit
    ExitSide exit_side = ExitSide::None;
};

/// Initial conditions of the exit-time protocol. p0 is set per experiment;
/// Bloch state starts in the ground state.
inline AtomState exit_protocol_state(double p0) {
    return AtomState{0.0, 0.0, p0, 0.0, 0.0, -1.0};
}

namespace detail {

template <class Stepper>
ExitTimeRecord exit_time_impl(Stepper& stepper, double delta, const AtomState& s0,
                              const IntegratorConfig& cfg, double tau_max) {
    constexpr double pi = std::numbers::pi;
    const double border_left = -0.5 * pi;
    const double border_right = 1.5 * pi;
    const double center = 0.5 * pi;

    stepper.start(s0.tau, {s0.x, s0.p, s0.u, s0.v, s0.z});
    const double tau_end = s0.tau + tau_max;

    ExitTimeRecord rec;
    rec.delta = delta;
    int center_sign = detail::sign_of(s0.x - center, -1);
    double x_prev = s0.x;

    while (stepper.time() < tau_end) {
        stepper.step_to(tau_end);
        const double x = stepper.state()[0];

        const int center_sign_end = detail::sign_of(x - center, center_sign);
        if (center_sign_end != center_sign) {
            ++rec.m;
            center_sign = center_sign_end;
        }

        const bool hit_right = x >= border_right;
        const bool hit_left = x <= border_left;
        if (hit_right || hit_left) {
            const double border = hit_right ? border_right : border_left;
            auto f = [&](double t) { return stepper.dense(t)[0] - border; };
            rec.exit_time = bisect_root(f, stepper.segment_begin(), stepper.segment_end(),
                                        x_prev - border, cfg.event_tol);
            rec.exit_side = hit_right ? ExitSide::Right : ExitSide::Left;
            return rec;
        }
        x_prev = x;
    }
    rec.exit_time = tau_max;
    rec.censored = true;
    return rec;
}

}  // namespace detail

/// Integrate until a border node is crossed or tau_max is reached (the run
/// is then censored, standing in for an infinite exit time).
inline ExitTimeRecord exit_time(double delta, double p0, const AtomState& base_state,
                                double omega_r, const IntegratorConfig& cfg,
                                double tau_max) {
    const LatticeParams params{omega_r, delta};
    validate(params);
    validate(cfg);
    AtomState s0 = base_state;
    s0.p = p0;
    validate_initial(s0);
    if (!(tau_max > 0.0)) throw std::invalid_argument("exit_time: tau_max must be positive");
    return with_stepper<5>(AtomOde{params}, cfg, [&](auto& stepper) {
        return detail::exit_time_impl(stepper, delta, s0, cfg, tau_max);
    });
}

struct ScanInterval {
    double delta_lo = 0.0;
    double delta_hi = 0.0;
    int level = 0;
    std::vector<ExitTimeRecord> records;  ///< ordered by delta
    std::vector<ScanInterval> children;   ///< refined sub-intervals
};

/// Exit times on a uniform Delta grid, cells evaluated in parallel.
inline ScanInterval scan(double delta_lo, double delta_hi, std::size_t resolution,
                         double p0, const AtomState& base_state, double omega_r,
                         const IntegratorConfig& cfg, double tau_max,
                         unsigned workers = 1, int level = 0) {
    if (resolution < 2) throw std::invalid_argument("scan: resolution must be >= 2");
    if (!(delta_hi > delta_lo)) throw std::invalid_argument("scan: empty interval");
    ScanInterval out;
    out.delta_lo = delta_lo;
    out.delta_hi = delta_hi;
    out.level = level;
    out.records.resize(resolution);
    parallel_for(resolution, workers, [&](std::size_t i) {
        const double delta =
            delta_lo + (delta_hi - delta_lo) * double(i) / double(resolution - 1);
        out.records[i] = exit_time(delta, p0, base_state, omega_r, cfg, tau_max);
    });
    return out;
}

enum class SegmentKind { Smooth, Unresolved };

struct ScanSegment {
    SegmentKind kind = SegmentKind::Unresolved;
    std::size_t first = 0;  ///< record index range, inclusive
    std::size_t last = 0;
    long m = 0;             ///< constant m of a Smooth segment
};

/// Split a scan into Smooth and Unresolved runs. Neighbors are compatible
/// when both exited, m matches, and T varies by less than 20%; a compatible
/// run of at least `window` samples is Smooth, everything else Unresolved.
inline std::vector<ScanSegment> classify_intervals(const ScanInterval& scan_data,
                                                   std::size_t window = 3) {
    const auto& recs = scan_data.records;
    std::vector<ScanSegment> segments;
    if (recs.empty()) return segments;
    if (window < 2) window = 2;

    auto compatible = [&](const ExitTimeRecord& a, const ExitTimeRecord& b) {
        if (a.censored || b.censored || a.m != b.m) return false;
        const double t_min = std::min(a.exit_time, b.exit_time);
        return t_min > 0.0 && std::abs(a.exit_time - b.exit_time) / t_min < 0.20;
    };

    std::vector<bool> in_smooth(recs.size(), false);
    std::size_t run_start = 0;
    for (std::size_t i = 1; i <= recs.size(); ++i) {
        const bool link_ok = i < recs.size() && compatible(recs[i - 1], recs[i]);
        if (!link_ok) {
            if (i - run_start >= window)
                for (std::size_t j = run_start; j < i; ++j) in_smooth[j] = true;
            run_start = i;
        }
    }
    std::size_t i = 0;
    while (i < recs.size()) {
        std::size_t j = i;
        while (j + 1 < recs.size() && in_smooth[j + 1] == in_smooth[i]) ++j;
        ScanSegment seg;
        seg.kind = in_smooth[i] ? SegmentKind::Smooth : SegmentKind::Unresolved;
        seg.first = i;
        seg.last = j;
        seg.m = recs[i].m;
        segments.push_back(seg);
        i = j + 1;
    }
    return segments;
}

/// Condition for first-order singular structure: the initial u0 can reach
/// the energy value in one jump, |arcsin u0 - arcsin H| < K.
inline bool first_order_condition(double u0, EnergyH h, JumpAmplitude k) {
    if (std::abs(u0) > 1.0)
        throw std::domain_error("first_order_condition: |u0| must not exceed 1");
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw std::domain_error("first_order_condition: H must lie in (0, 1)");
    return std::abs(std::asin(u0) - std::asin(h.value)) < k.value;
}

namespace detail {

/// H(delta) of the scan protocol, and the second-order gap 2 arcsin H - K.
struct SecondOrderCondition {
    double p0, omega_r;
    AtomState base;

    double energy(double abs_delta) const {
        // scans run at negative detuning
        const LatticeParams params{omega_r, -abs_delta};
        AtomState s = base;
        s.p = p0;
        return total_energy(s, params).value;
    }

    double gap(double abs_delta) const {
        const double h = energy(abs_delta);
        if (!(h > 0.0) || !(h < 1.0)) return std::numeric_limits<double>::quiet_NaN();
        const LatticeParams params{omega_r, -abs_delta};
        const double k = jump_amplitude(params, p_node(EnergyH{h}, omega_r)).value;
        return 2.0 * std::asin(h) - k;
    }
};

}  // namespace detail

struct NoRoot : std::runtime_error {
    NoRoot() : std::runtime_error("second_order_threshold: no root in the search bracket") {}
};

/// Smallest |Delta| at which second-order singularities can appear: the root
/// of 2 arcsin H(Delta) = K(Delta) under the scan protocol (negative
/// detuning), found by bracketed bisection.
inline double second_order_threshold(double p0, double omega_r, const AtomState& base_state) {
    detail::SecondOrderCondition cond{p0, omega_r, base_state};
    const double h0 = cond.energy(0.0);
    if (!(h0 > 0.0)) throw NoRoot{};

    // march upward until the gap changes sign; H must stay in (0, 1)
    double lo = 0.0;
    double glo = cond.gap(1e-12);
    if (!(glo > 0.0)) throw NoRoot{};
    double hi = 0.0;
    const int n_scan = 4000;
    const double d_max = 2.0 * h0;  // beyond this H(delta) <= 0 for z0 = -1 protocols
    for (int i = 1; i <= n_scan; ++i) {
        const double d = d_max * double(i) / double(n_scan);
        const double g = cond.gap(d);
        if (std::isnan(g)) break;
        if (g <= 0.0) {
            hi = d;
            break;
        }
        lo = d;
    }
    if (hi == 0.0) throw NoRoot{};
    for (int it = 0; it < 200 && (hi - lo) > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double g = cond.gap(mid);
        if (std::isnan(g) || g <= 0.0)
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace latwalk
