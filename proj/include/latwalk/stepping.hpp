// Shared step-control types and root localization helpers for the adaptive
// Runge-Kutta steppers.
#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace latwalk {

/// Integration scheme; both are adaptive explicit embedded Runge-Kutta pairs
/// with dense output. The order-8 pair is the default; the order-5 pair is
/// kept as an independent cross-check route.
enum class Scheme { Dop853, Dopri5 };

struct IntegratorConfig {
    Scheme scheme = Scheme::Dop853;
    double abs_tol = 1e-14;   ///< absolute step-error tolerance
    double rel_tol = 1e-14;   ///< relative step-error tolerance
    double max_step = 50.0;   ///< upper bound on the step size
    double event_tol = 1e-9;  ///< bisection tolerance on tau for events
    double fixed_step = 0.0;  ///< > 0 disables step control (convergence tests)
    long sample_stride = 0;   ///< store every N-th accepted step; 0 = endpoints only
};

inline void validate(const IntegratorConfig& cfg) {
    if (!(cfg.abs_tol > 0.0) || !(cfg.rel_tol > 0.0))
        throw std::invalid_argument("IntegratorConfig: tolerances must be positive");
    if (!(cfg.max_step > 0.0))
        throw std::invalid_argument("IntegratorConfig: max_step must be positive");
    if (!(cfg.event_tol > 0.0))
        throw std::invalid_argument("IntegratorConfig: event_tol must be positive");
    if (cfg.sample_stride < 0)
        throw std::invalid_argument("IntegratorConfig: sample_stride must be >= 0");
}

/// Step control could not reach the requested tolerance above the minimum
/// step size; carries the time at which integration stalled.
struct StepFailure : std::runtime_error {
    double tau;
    explicit StepFailure(double tau_)
        : std::runtime_error("integration step failure at tau = " + std::to_string(tau_)),
          tau(tau_) {}
};

/// Bisect f on [a, b] given the value (or just the sign) of f at a, with
/// f(a), f(b) of opposite sign, down to tol in the argument; capped at 128
/// iterations.
template <class F>
double bisect_root(F&& f, double a, double b, double f_left, double tol) {
    for (int it = 0; it < 128 && (b - a) > tol; ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0.0) == (f_left > 0.0)) {
            a = mid;
            f_left = fm;
        } else {
            b = mid;
        }
    }
    return 0.5 * (a + b);
}

/// All sign-change roots of f on [a, b], scanned on a uniform grid of
/// scan_points subintervals and refined by bisection.
template <class F>
std::vector<double> find_sign_changes(F&& f, double a, double b, double tol,
                                      int scan_points = 8) {
    std::vector<double> roots;
    if (!(b > a)) return roots;
    double prev_t = a;
    double prev_f = f(a);
    for (int k = 1; k <= scan_points; ++k) {
        const double t = a + (b - a) * double(k) / double(scan_points);
        const double ft = f(t);
        if (prev_f == 0.0) {
            roots.push_back(prev_t);
        } else if (ft != 0.0 && (ft > 0.0) != (prev_f > 0.0)) {
            roots.push_back(bisect_root(f, prev_t, t, prev_f, tol));
        }
        prev_t = t;
        prev_f = ft;
    }
    if (prev_f == 0.0) roots.push_back(prev_t);
    return roots;
}

}  // namespace latwalk
