// State space and equations of motion for a two-level atom in a 1D standing
// laser wave, in dimensionless form: time in units of the inverse Rabi
// frequency, position in inverse wave numbers, momentum in photon momenta.
//
// The five dynamical variables are the center-of-mass pair (x, p) and the
// Bloch vector (u, v, z): synchronized dipole component, quadrature dipole
// component, and population inversion. Two exact invariants exist (total
// energy and Bloch norm); both are monitored, never enforced, during
// integration.
#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace latwalk {

/// Control parameters of the lattice, both normalized to the Rabi frequency.
struct LatticeParams {
    double omega_r = 1e-5;  ///< recoil frequency; 1e-5 in all reference runs
    double delta = 0.0;     ///< atom-field detuning, any sign
};

inline void validate(const LatticeParams& params) {
    if (!(params.omega_r > 0.0))
        throw std::invalid_argument("LatticeParams: omega_r must be positive");
}

/// Full dynamical state at time tau.
struct AtomState {
    double tau = 0.0;
    double x = 0.0;
    double p = 0.0;
    double u = 0.0;
    double v = 0.0;
    double z = 0.0;
};

/// Squared length check helper; exactly u^2 + v^2 + z^2.
inline double bloch_norm(const AtomState& s) {
    return s.u * s.u + s.v * s.v + s.z * s.z;
}

/// Construction-time invariants: the Bloch vector must sit on the unit
/// sphere to 1e-12 and each component in [-1, 1]. Drift away from the sphere
/// during integration is a diagnostic, so nothing is renormalized later.
inline void validate_initial(const AtomState& s) {
    if (std::abs(s.u) > 1.0 || std::abs(s.v) > 1.0 || std::abs(s.z) > 1.0)
        throw std::invalid_argument("AtomState: Bloch components must lie in [-1, 1]");
    if (std::abs(bloch_norm(s) - 1.0) > 1e-12)
        throw std::invalid_argument(
            "AtomState: Bloch norm is " + std::to_string(bloch_norm(s)) +
            ", must equal 1 within 1e-12");
}

struct StateDerivative {
    double dx, dp, du, dv, dz;
};

/// Right-hand side of the equations of motion:
///   x' = omega_r p,  p' = -u sin x,
///   u' = delta v,  v' = -delta u + 2 z cos x,  z' = -2 v cos x.
inline StateDerivative derivatives(const AtomState& s, const LatticeParams& params) {
    const double sin_x = std::sin(s.x);
    const double cos_x = std::cos(s.x);
    return StateDerivative{
        params.omega_r * s.p,
        -s.u * sin_x,
        params.delta * s.v,
        -params.delta * s.u + 2.0 * s.z * cos_x,
        -2.0 * s.v * cos_x,
    };
}

/// Total energy, one of the two integrals of motion. Chaotic transport lives
/// in 0 < H < 1; H < 0 means the atom cannot leave the first well, H > 1
/// means it never turns.
struct EnergyH {
    double value = 0.0;
};

inline EnergyH total_energy(const AtomState& s, const LatticeParams& params) {
    return EnergyH{0.5 * params.omega_r * s.p * s.p - s.u * std::cos(s.x) -
                   0.5 * params.delta * s.z};
}

enum class ResonantMotion { Trapped, Separatrix, Ballistic };

/// Trajectory type of the resonant (delta = 0) pendulum: trapped in a well,
/// on the separatrix, or ballistic. Exact equality is measure zero, so the
/// separatrix gets a 1e-12 band.
inline ResonantMotion classify_resonant_motion(EnergyH h0, double u0) {
    if (std::abs(h0.value - u0) < 1e-12) return ResonantMotion::Separatrix;
    return h0.value < u0 ? ResonantMotion::Trapped : ResonantMotion::Ballistic;
}

/// Phase bookkeeping for the resonant closed-form Bloch solution
///   v = s sqrt(1-u0^2) cos(chi),  z = -s sqrt(1-u0^2) sin(chi),
/// with chi = 2 * integral of cos x dtau' + chi0 accumulated along the
/// trajectory. The branch sign s is fixed so (v, z) at chi0 reproduces the
/// initial values; for v0 = 0 the upper branch is taken.
struct ResonantPhase {
    double chi0 = 0.0;
    double chi = 0.0;
    double branch_sign = 1.0;
};

inline ResonantPhase make_resonant_phase(double u0, double v0, double z0) {
    const double transverse_sq = 1.0 - u0 * u0;
    if (z0 * z0 > transverse_sq * (1.0 + 1e-12))
        throw std::domain_error("make_resonant_phase: |z0| exceeds sqrt(1 - u0^2)");
    const double sign = v0 < 0.0 ? -1.0 : 1.0;
    const double ratio = transverse_sq > 0.0
        ? std::clamp(z0 / std::sqrt(transverse_sq), -1.0, 1.0)
        : 0.0;
    const double chi0 = -sign * std::asin(ratio);
    return ResonantPhase{chi0, chi0, sign};
}

struct BlochVZ {
    double v, z;
};

/// Resonant oracle for (v, z) given u0 and the accumulated phase. Requires
/// |z0| <= sqrt(1 - u0^2), i.e. a state on the Bloch sphere.
inline BlochVZ resonant_vz(double u0, double z0, const ResonantPhase& phase) {
    const double transverse_sq = 1.0 - u0 * u0;
    if (z0 * z0 > transverse_sq * (1.0 + 1e-12))
        throw std::domain_error("resonant_vz: |z0| exceeds sqrt(1 - u0^2)");
    const double amp = transverse_sq > 0.0 ? std::sqrt(transverse_sq) : 0.0;
    return BlochVZ{phase.branch_sign * amp * std::cos(phase.chi),
                   -phase.branch_sign * amp * std::sin(phase.chi)};
}

}  // namespace latwalk
