// Dormand-Prince 8(5,3): 12-stage explicit Runge-Kutta of order 8 with the
// combined 5th/3rd-order error estimate and an order-7 dense output. The
// dense output costs three extra derivative evaluations and is prepared
// lazily, only for steps that actually get interpolated (event brackets).
// This is the workhorse for tau ~ 1e6..1e8 horizons, where a 5th-order
// pair's secular invariant drift becomes visible.
#pragma once

#include "dop853_coefficients.hpp"
#include "stepping.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>

namespace latwalk {

template <std::size_t N, class System>
class Dop853 {
public:
    using Y = std::array<double, N>;

    Dop853(System system, IntegratorConfig cfg) : sys_(std::move(system)), cfg_(cfg) {
        validate(cfg);
    }

    void start(double t0, const Y& y0) {
        t_ = t0;
        y_ = y0;
        sys_(t_, y_, k_[0]);
        k0_pending_ = false;
        h_next_ = cfg_.fixed_step > 0.0 ? cfg_.fixed_step : initial_step();
        seg_t0_ = seg_t1_ = t0;
        dense_ready_ = false;
    }

    double time() const { return t_; }
    const Y& state() const { return y_; }
    std::size_t accepted_steps() const { return accepted_; }

    /// Last accepted step interval, the domain of dense(). The interpolant
    /// stays valid until the next step_to call.
    double segment_begin() const { return seg_t0_; }
    double segment_end() const { return seg_t1_; }

    /// One accepted step, never beyond t_limit. Returns the new time.
    /// Throws StepFailure when step control stalls.
    double step_to(double t_limit) {
        if (k0_pending_) {
            k_[0] = k0_next_;  // FSAL hand-over, deferred to keep dense() valid
            k0_pending_ = false;
        }
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
                err == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(err, -0.125), 0.2, 10.0);
            if (accept) {
                seg_y0_ = y_;
                seg_h_ = h;
                seg_t0_ = t_;
                seg_t1_ = clamped ? t_limit : t_ + h;
                t_ = seg_t1_;
                y_ = y_new_;
                k0_next_ = k_[12];  // f(t_new, y_new)
                k0_pending_ = true;
                dense_ready_ = false;
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

    /// Interpolated state inside the last accepted step (order 7).
    Y dense(double t) const {
        if (!dense_ready_) prepare_dense();
        const double x = seg_h_ != 0.0 ? (t - seg_t0_) / seg_h_ : 0.0;
        const double x1 = 1.0 - x;
        Y out;
        for (std::size_t i = 0; i < N; ++i) {
            double acc = f_[6][i];
            acc = f_[5][i] + x * acc;
            acc = f_[4][i] + x1 * acc;
            acc = f_[3][i] + x * acc;
            acc = f_[2][i] + x1 * acc;
            acc = f_[1][i] + x * acc;
            acc = f_[0][i] + x1 * acc;
            out[i] = seg_y0_[i] + x * acc;
        }
        return out;
    }

private:
    double try_step(double h) {
        for (int s = 1; s < dop853::kStages; ++s) {
            Y w = y_;
            for (int j = 0; j < s; ++j) {
                const double a = dop853::kA[s][j];
                if (a == 0.0) continue;
                for (std::size_t i = 0; i < N; ++i) w[i] += h * a * k_[j][i];
            }
            sys_(t_ + dop853::kC[s] * h, w, k_[s]);
        }
        for (std::size_t i = 0; i < N; ++i) {
            double acc = 0.0;
            for (int j = 0; j < dop853::kStages; ++j) acc += dop853::kB[j] * k_[j][i];
            y_new_[i] = y_[i] + h * acc;
        }
        sys_(t_ + h, y_new_, k_[12]);

        double err5_sq = 0.0, err3_sq = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            double e5 = 0.0, e3 = 0.0;
            for (int j = 0; j < 13; ++j) {
                e5 += dop853::kE5[j] * k_[j][i];
                e3 += dop853::kE3[j] * k_[j][i];
            }
            const double scale =
                cfg_.abs_tol + cfg_.rel_tol * std::max(std::abs(y_[i]), std::abs(y_new_[i]));
            err5_sq += (e5 / scale) * (e5 / scale);
            err3_sq += (e3 / scale) * (e3 / scale);
        }
        const double denom = err5_sq + 0.01 * err3_sq;
        if (denom <= 0.0) return 0.0;
        return std::abs(h) * err5_sq / std::sqrt(denom * double(N));
    }

    /// Extended stages 13..15 and the seven interpolation vectors. Uses
    /// k_[0] = f at the segment start (the FSAL hand-over is deferred) and
    /// k_[12] = f at the segment end.
    void prepare_dense() const {
        for (int s = dop853::kStages + 1; s < dop853::kStagesExtended; ++s) {
            Y w = seg_y0_;
            for (int j = 0; j < s; ++j) {
                const double a = dop853::kA[s][j];
                if (a == 0.0) continue;
                for (std::size_t i = 0; i < N; ++i) w[i] += seg_h_ * a * k_[j][i];
            }
            sys_(seg_t0_ + dop853::kC[s] * seg_h_, w, k_[s]);
        }
        for (std::size_t i = 0; i < N; ++i) {
            const double dy = y_[i] - seg_y0_[i];
            f_[0][i] = dy;
            f_[1][i] = seg_h_ * k_[0][i] - dy;
            f_[2][i] = 2.0 * dy - seg_h_ * (k_[0][i] + k_[12][i]);
        }
        for (int r = 0; r < 4; ++r)
            for (std::size_t i = 0; i < N; ++i) {
                double acc = 0.0;
                for (int j = 0; j < dop853::kStagesExtended; ++j) {
                    const double dcoef = dop853::kD[r][j];
                    if (dcoef != 0.0) acc += dcoef * k_[j][i];
                }
                f_[3 + r][i] = seg_h_ * acc;
            }
        dense_ready_ = true;
    }

    /// hinit heuristic with the order-8 exponent.
    double initial_step() const {
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double scale = cfg_.abs_tol + cfg_.rel_tol * std::abs(y_[i]);
            d0 += (y_[i] / scale) * (y_[i] / scale);
            d1 += (k_[0][i] / scale) * (k_[0][i] / scale);
        }
        d0 = std::sqrt(d0 / double(N));
        d1 = std::sqrt(d1 / double(N));
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, cfg_.max_step);
        Y y1, f1;
        for (std::size_t i = 0; i < N; ++i) y1[i] = y_[i] + h0 * k_[0][i];
        sys_(t_ + h0, y1, f1);
        double d2 = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double scale = cfg_.abs_tol + cfg_.rel_tol * std::abs(y_[i]);
            d2 += ((f1[i] - k_[0][i]) / scale) * ((f1[i] - k_[0][i]) / scale);
        }
        d2 = std::sqrt(d2 / double(N)) / h0;
        const double dm = std::max(d1, d2);
        const double h1 = dm > 1e-15 ? std::pow(0.01 / dm, 0.125) : std::max(1e-6, h0 * 1e-3);
        return std::min({100.0 * h0, h1, cfg_.max_step});
    }

    System sys_;
    IntegratorConfig cfg_;
    double t_ = 0.0, h_next_ = 0.0;
    double seg_t0_ = 0.0, seg_t1_ = 0.0, seg_h_ = 0.0;
    std::size_t accepted_ = 0;
    Y y_{}, y_new_{}, seg_y0_{}, k0_next_{};
    bool k0_pending_ = false;
    mutable std::array<Y, dop853::kStagesExtended> k_{};
    mutable std::array<Y, 7> f_{};
    mutable bool dense_ready_ = false;
};

}  // namespace latwalk
