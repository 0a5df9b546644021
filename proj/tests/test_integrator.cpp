#include <catch2/catch.hpp>

#include "latwalk/integrator.hpp"

#include <cmath>
#include <numbers>

using namespace latwalk;

namespace {

constexpr double kPi = std::numbers::pi;

struct ScalarExp {
    // y' = y cos t, y = exp(sin t)
    void operator()(double t, const std::array<double, 1>& y,
                    std::array<double, 1>& dydt) const {
        dydt[0] = y[0] * std::cos(t);
    }
};

template <class Stepper>
double dense_midpoint_error(double h) {
    IntegratorConfig cfg;
    cfg.abs_tol = cfg.rel_tol = 1e-3;  // irrelevant, fixed step
    cfg.fixed_step = h;
    cfg.max_step = h;
    Stepper stepper(ScalarExp{}, cfg);
    stepper.start(0.0, {1.0});
    double worst = 0.0;
    while (stepper.time() < 2.0) {
        stepper.step_to(2.0);
        for (double frac : {0.3, 0.5, 0.7}) {
            const double tm = stepper.segment_begin() +
                              frac * (stepper.segment_end() - stepper.segment_begin());
            const double approx = stepper.dense(tm)[0];
            worst = std::max(worst, std::abs(approx - std::exp(std::sin(tm))));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("order-5 pair: dense output converges at fifth order", "[integrator]") {
    using S = Dopri5<1, ScalarExp>;
    const double e1 = dense_midpoint_error<S>(0.2);
    const double e2 = dense_midpoint_error<S>(0.1);
    const double e3 = dense_midpoint_error<S>(0.05);
    // order-5 interpolant: halving h divides the error by ~32
    CHECK(e1 / e2 == Approx(32.0).margin(16.0));
    CHECK(e2 / e3 == Approx(32.0).margin(16.0));
}

TEST_CASE("order-8 pair: dense output converges at high order", "[integrator]") {
    using S = Dop853<1, ScalarExp>;
    const double e1 = dense_midpoint_error<S>(0.4);
    const double e2 = dense_midpoint_error<S>(0.2);
    const double e3 = dense_midpoint_error<S>(0.1);
    CHECK(e1 < 1e-7);
    // at least order 7: halving h divides the error by >= 128
    CHECK(e1 / e2 > 100.0);
    CHECK(e2 / e3 > 100.0);
    CHECK(e1 / e2 < 600.0);
}

TEST_CASE("solution error shrinks with the tolerance", "[integrator]") {
    auto endpoint_error = [](double tol) {
        IntegratorConfig cfg;
        cfg.abs_tol = cfg.rel_tol = tol;
        Dopri5<1, ScalarExp> stepper(ScalarExp{}, cfg);
        stepper.start(0.0, {1.0});
        while (stepper.time() < 5.0) stepper.step_to(5.0);
        return std::abs(stepper.state()[0] - std::exp(std::sin(5.0)));
    };
    const double coarse = endpoint_error(1e-6);
    const double fine = endpoint_error(1e-10);
    CHECK(fine < coarse);
    CHECK(fine < 1e-9);
}

TEST_CASE("step failure reports the stalling time", "[integrator]") {
    struct Blowup {
        void operator()(double t, const std::array<double, 1>& y,
                        std::array<double, 1>& dydt) const {
            dydt[0] = y[0] / (1.0 - t);
        }
    };
    IntegratorConfig cfg;
    cfg.abs_tol = cfg.rel_tol = 1e-10;
    Dopri5<1, Blowup> stepper(Blowup{}, cfg);
    stepper.start(0.0, {1.0});
    try {
        for (int i = 0; i < 100000; ++i) stepper.step_to(2.0);
        FAIL("expected StepFailure");
    } catch (const StepFailure& e) {
        CHECK(e.tau == Approx(1.0).margin(1e-3));
    }
}

TEST_CASE("force-free flight: exact linear motion and crossing times", "[integrator]") {
    const LatticeParams params{1e-5, 0.0};
    const AtomState s0{0, 0, 200, 0, 0, -1};
    IntegratorConfig cfg;
    const auto traj = integrate(s0, params, cfg, 1e4);

    CHECK(traj.final_state.p == Approx(200.0).epsilon(1e-12));
    CHECK(traj.final_state.x == Approx(2e-3 * 1e4).epsilon(1e-10));

    // nodes sit at x = pi/2 + k pi, reached at tau = x / (w_r p0)
    REQUIRE(traj.crossings.size() == 6);
    for (std::size_t k = 0; k < traj.crossings.size(); ++k) {
        const double expected = (0.5 * kPi + double(k) * kPi) / 2e-3;
        CHECK(traj.crossings[k].tau == Approx(expected).epsilon(1e-9));
        CHECK(std::abs(std::cos(traj.crossings[k].x_node)) < 1e-10);
        CHECK(traj.crossings[k].p_at_node == Approx(200.0).epsilon(1e-12));
        CHECK(traj.crossings[k].m == long(k + 1));
    }
    CHECK(traj.turns.empty());

    const auto [dh, dnorm] = invariant_drift(traj);
    CHECK(dh < 1e-10);
    CHECK(dnorm < 1e-10);
    CHECK(traj.drift.max_abs_dh < 1e-10);
    CHECK(traj.drift.max_abs_dnorm < 1e-10);

    // the slower cross-check scheme reproduces the same events
    IntegratorConfig cfg5;
    cfg5.scheme = Scheme::Dopri5;
    cfg5.abs_tol = cfg5.rel_tol = 1e-12;
    const auto traj5 = integrate(s0, params, cfg5, 1e4);
    REQUIRE(traj5.crossings.size() == traj.crossings.size());
    for (std::size_t k = 0; k < traj.crossings.size(); ++k)
        CHECK(traj5.crossings[k].tau == Approx(traj.crossings[k].tau).epsilon(1e-9));
}

TEST_CASE("resonant trapped motion stays bounded and periodic", "[integrator]") {
    // H0 = w_r p0^2/2 - u0 < u0: oscillation in the first well, no transport
    const double u0 = std::sqrt(0.5);
    const AtomState s0{0, 0, 50, u0, 0.0, u0};
    const LatticeParams params{1e-5, 0.0};
    const auto h0 = total_energy(s0, params);
    REQUIRE(h0.value < u0);
    IntegratorConfig cfg;
    cfg.sample_stride = 20;
    const auto traj = integrate(s0, params, cfg, 2e4);
    CHECK(traj.crossings.empty());  // never reaches a node
    CHECK(traj.turns.size() >= 2);
    for (const auto& s : traj.samples) REQUIRE(std::abs(s.x) < 0.5 * kPi);
}

TEST_CASE("locate_events on controlled segments", "[integrator]") {
    IntegratorConfig cfg;
    cfg.max_step = 100.0;
    cfg.fixed_step = 75.0;

    SECTION("node crossing inside x: 1.5 -> 1.65") {
        // force-free (u = 0): one 75-step spans 0.15 in x for p = 0.15/(75 w_r)
        Dopri5<5, AtomOde> stepper(AtomOde{LatticeParams{1e-5, 0.0}}, cfg);
        stepper.start(0.0, {1.5, 0.15 / (75.0 * 1e-5), 0, 0, 0});
        stepper.step_to(75.0);
        CHECK(stepper.state()[0] == Approx(1.65).epsilon(1e-12));
        const auto roots = locate_events(stepper, EventKind::NodeCrossing, 1e-10);
        REQUIRE(roots.size() == 1);
        CHECK(std::cos(stepper.dense(roots[0])[0]) == Approx(0.0).margin(1e-10));
        CHECK(locate_events(stepper, EventKind::Turn, 1e-10).empty());
    }
    SECTION("turn inside p: 5 -> -3") {
        // pin the atom near a node so the force is -1: p(t) = 5 - t
        Dopri5<5, AtomOde> stepper(AtomOde{LatticeParams{1e-5, 0.0}}, cfg);
        cfg.fixed_step = 8.0;
        Dopri5<5, AtomOde> s2(AtomOde{LatticeParams{1e-5, 0.0}}, cfg);
        s2.start(0.0, {0.5 * kPi, 5.0, 1.0, 0.0, 0.0});
        s2.step_to(8.0);
        CHECK(s2.state()[1] == Approx(-3.0).margin(1e-3));
        const auto turns = locate_events(s2, EventKind::Turn, 1e-10);
        REQUIRE(turns.size() == 1);
        CHECK(turns[0] == Approx(5.0).margin(1e-2));
    }
    SECTION("segment without a root returns nothing") {
        Dopri5<5, AtomOde> stepper(AtomOde{LatticeParams{1e-5, 0.0}}, cfg);
        stepper.start(0.0, {1.0, 0.2 / (75.0 * 1e-5), 0, 0, 0});
        stepper.step_to(75.0);
        CHECK(stepper.state()[0] == Approx(1.2).epsilon(1e-12));
        CHECK(locate_events(stepper, EventKind::NodeCrossing, 1e-10).empty());
    }
}

TEST_CASE("chaotic reference run: invariants, parity, event order", "[integrator]") {
    // reference chaotic-transport parameters at reduced horizon
    const LatticeParams params{1e-5, -0.05};
    const AtomState s0{0, 0, 300, 0, 0, -1};
    IntegratorConfig cfg;
    cfg.sample_stride = 25;
    const auto traj = integrate(s0, params, cfg, 5e4);

    CHECK(traj.drift.max_abs_dh < 1e-9);
    CHECK(traj.drift.max_abs_dnorm < 1e-9);
    REQUIRE(traj.crossings.size() >= 10);

    SECTION("events and samples are strictly ordered") {
        for (std::size_t i = 1; i < traj.samples.size(); ++i)
            REQUIRE(traj.samples[i].tau > traj.samples[i - 1].tau);
        for (std::size_t i = 1; i < traj.crossings.size(); ++i)
            REQUIRE(traj.crossings[i].tau > traj.crossings[i - 1].tau);
        for (std::size_t i = 1; i < traj.turns.size(); ++i)
            REQUIRE(traj.turns[i].tau > traj.turns[i - 1].tau);
    }
    SECTION("crossing residual and parity rule") {
        for (const auto& ev : traj.crossings) {
            REQUIRE(std::abs(std::cos(ev.x_node)) < 1e-10);
            REQUIRE((ev.parity == Parity::Even) == (ev.m % 2 == 0));
        }
        // even m => cos x > 0 just after the crossing (x0 = 0 start)
        for (std::size_t i = 0; i + 1 < traj.crossings.size(); ++i) {
            const double tau_mid = 0.5 * (traj.crossings[i].tau + traj.crossings[i + 1].tau);
            // pick the nearest stored sample inside the interval instead of re-integrating
            const AtomState* probe = nullptr;
            for (const auto& s : traj.samples)
                if (s.tau > traj.crossings[i].tau && s.tau < traj.crossings[i + 1].tau) {
                    probe = &s;
                    if (s.tau >= tau_mid) break;
                }
            if (probe == nullptr) continue;
            const bool expect_positive = traj.crossings[i].m % 2 == 0;
            REQUIRE((std::cos(probe->x) > 0.0) == expect_positive);
        }
    }
    SECTION("momentum sign is constant between consecutive turns") {
        REQUIRE(traj.turns.size() >= 2);
        for (std::size_t i = 0; i + 1 < traj.turns.size(); ++i) {
            int sign = 0;
            for (const auto& s : traj.samples) {
                if (s.tau <= traj.turns[i].tau || s.tau >= traj.turns[i + 1].tau) continue;
                const int here = s.p > 0.0 ? 1 : (s.p < 0.0 ? -1 : 0);
                if (sign == 0) sign = here;
                if (here != 0) REQUIRE(here == sign);
            }
        }
    }
    SECTION("momentum at crossings matches the exact energy relation") {
        const double h0 = total_energy(s0, params).value;
        for (const auto& ev : traj.crossings) {
            const double expected =
                std::sqrt(2.0 * (h0 + 0.5 * params.delta * ev.z) / params.omega_r);
            REQUIRE(std::abs(std::abs(ev.p_at_node) - expected) < 1e-5);
        }
    }
}

TEST_CASE("time reversal on a resonant trajectory", "[integrator]") {
    const double u0 = std::sqrt(0.5);
    const AtomState s0{0, 0.3, 420, u0, 0.0, u0};
    const LatticeParams params{1e-5, 0.0};
    IntegratorConfig cfg;
    const auto fwd = integrate(s0, params, cfg, 1e3);

    AtomState back = fwd.final_state;
    back.p = -back.p;
    back.v = -back.v;
    // the drifted Bloch norm sits a hair off the construction tolerance
    const double norm = std::sqrt(bloch_norm(back));
    back.u /= norm;
    back.v /= norm;
    back.z /= norm;
    const auto rev = integrate(back, params, cfg, 1e3);

    CHECK(rev.final_state.x == Approx(s0.x).margin(1e-8));
    CHECK(-rev.final_state.p == Approx(s0.p).margin(1e-8));
    CHECK(rev.final_state.u == Approx(s0.u).margin(1e-8));
    CHECK(-rev.final_state.v == Approx(s0.v).margin(1e-8));
    CHECK(rev.final_state.z == Approx(s0.z).margin(1e-8));
}

TEST_CASE("single-sample drift is trivial", "[integrator]") {
    Trajectory traj;
    traj.params = LatticeParams{1e-5, 0.0};
    traj.samples.push_back(AtomState{0, 0, 200, 0, 0, -1});
    const auto [dh, dnorm] = invariant_drift(traj);
    CHECK(dh == 0.0);
    CHECK(dnorm == Approx(0.0).margin(1e-15));
}

TEST_CASE("config validation", "[integrator]") {
    IntegratorConfig cfg;
    cfg.abs_tol = 0.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = IntegratorConfig{};
    cfg.max_step = -1.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = IntegratorConfig{};
    CHECK_THROWS_AS(integrate(AtomState{0, 0, 200, 0, 0, -1}, LatticeParams{1e-5, 0.0}, cfg, -1.0),
                    std::invalid_argument);
}

TEST_CASE("resonant Bloch closed form matches the full integration", "[integrator]") {
    // augment the state with the accumulated phase chi = 2 int cos x dtau'
    struct AtomChiOde {
        LatticeParams params;
        void operator()(double, const std::array<double, 6>& y,
                        std::array<double, 6>& dydt) const {
            const AtomState s{0, y[0], y[1], y[2], y[3], y[4]};
            const auto d = derivatives(s, params);
            dydt = {d.dx, d.dp, d.du, d.dv, d.dz, 2.0 * std::cos(y[0])};
        }
    };
    const LatticeParams params{1e-5, 0.0};
    const double u0 = 0.2, z0 = -0.6;
    const double v0 = std::sqrt(1.0 - u0 * u0 - z0 * z0);
    auto phase = make_resonant_phase(u0, v0, z0);

    IntegratorConfig cfg;
    Dop853<6, AtomChiOde> stepper(AtomChiOde{params}, cfg);
    stepper.start(0.0, {0.0, 420.0, u0, v0, z0, phase.chi0});
    double worst = 0.0;
    while (stepper.time() < 1e4) {
        stepper.step_to(1e4);
        const auto& y = stepper.state();
        phase.chi = y[5];
        const auto vz = resonant_vz(u0, z0, phase);
        worst = std::max({worst, std::abs(y[3] - vz.v), std::abs(y[4] - vz.z)});
    }
    CHECK(worst < 1e-6);
}
