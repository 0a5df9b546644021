// Flight/trapping statistics: segmentation of crossing/turn event streams
// into transport events, log-binned empirical PDFs over the discrete length
// l (number of node crossings), and the analytic PDF family: geometric laws
// for large jumps, first-passage series, power-law head and exponential tail
// for small jumps.
#pragma once

#include "dynamics.hpp"
#include "integrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace latwalk {

enum class TransportKind { Flight, Trapping };

/// One flight or trapping event. A flight passes at least two successive
/// antinodes, i.e. l >= 3 node crossings between bounding turns; everything
/// between flights is trapping, with l counting every crossing including
/// repeated crossings of the same node. Events clipped by the ends of the
/// data (no bounding turn, or unconfirmed trapping end) are censored and
/// excluded from PDFs.
struct TransportEvent {
    TransportKind kind = TransportKind::Flight;
    long l = 0;
    double tau_start = 0.0;
    double tau_end = 0.0;
    double length = std::numeric_limits<double>::quiet_NaN();  ///< |x| between turns, flights only
    bool censored = false;
};

/// Streaming segmentation of time-ordered crossing/turn events.
///
/// The stream is cut into inter-turn pieces. A piece with >= 3 crossings is a
/// flight; consecutive sub-3 pieces merge into a single trapping (this is
/// what makes the 2-crossings-per-turn cycle of a 2pi-wide well one event).
/// A trapping is complete only once a flight piece follows it.
class EventSegmenter {
public:
    using Sink = std::function<void(const TransportEvent&)>;

    EventSegmenter(double tau_begin, Sink sink)
        : sink_(std::move(sink)), piece_start_(tau_begin) {}

    void on_crossing(double /*tau*/) { ++piece_crossings_; }

    void on_turn(double tau, double x = std::numeric_limits<double>::quiet_NaN()) {
        close_piece(tau, x, false);
        piece_start_ = tau;
        piece_start_x_ = x;
        piece_opened_by_turn_ = true;
        piece_crossings_ = 0;
        any_turn_ = true;
    }

    /// Flush the trailing, necessarily censored, material.
    void finish(double tau_end) {
        if (!any_turn_) {
            // A trajectory without turns is a single censored flight.
            TransportEvent ev;
            ev.kind = TransportKind::Flight;
            ev.l = piece_crossings_;
            ev.tau_start = piece_start_;
            ev.tau_end = tau_end;
            ev.censored = true;
            sink_(ev);
            piece_crossings_ = 0;
            return;
        }
        close_piece(tau_end, std::numeric_limits<double>::quiet_NaN(), true);
        flush_buffer(true);
    }

private:
    void close_piece(double tau, double x, bool at_end) {
        const long c = piece_crossings_;
        if (c >= 3) {
            flush_buffer(false);
            TransportEvent ev;
            ev.kind = TransportKind::Flight;
            ev.l = c;
            ev.tau_start = piece_start_;
            ev.tau_end = tau;
            if (piece_opened_by_turn_ && !at_end && !std::isnan(piece_start_x_) &&
                !std::isnan(x))
                ev.length = std::abs(x - piece_start_x_);
            ev.censored = !piece_opened_by_turn_ || at_end;
            sink_(ev);
        } else if (c >= 1) {
            if (!buffer_active_) {
                buffer_active_ = true;
                buffer_l_ = 0;
                buffer_start_ = piece_start_;
                buffer_censored_ = !piece_opened_by_turn_;
            }
            buffer_l_ += c;
            buffer_end_ = tau;
        } else if (buffer_active_) {
            buffer_end_ = tau;  // double turn without crossings extends the trapping
        }
    }

    void flush_buffer(bool censored_end) {
        if (!buffer_active_) return;
        TransportEvent ev;
        ev.kind = TransportKind::Trapping;
        ev.l = buffer_l_;
        ev.tau_start = buffer_start_;
        ev.tau_end = buffer_end_;
        ev.censored = buffer_censored_ || censored_end;
        sink_(ev);
        buffer_active_ = false;
    }

    Sink sink_;
    double piece_start_;
    double piece_start_x_ = std::numeric_limits<double>::quiet_NaN();
    bool piece_opened_by_turn_ = false;
    long piece_crossings_ = 0;
    bool any_turn_ = false;

    bool buffer_active_ = false;
    long buffer_l_ = 0;
    double buffer_start_ = 0.0, buffer_end_ = 0.0;
    bool buffer_censored_ = false;
};

/// Partition a trajectory's event streams into transport events. Every
/// crossing lands in exactly one event (censored ones included).
inline std::vector<TransportEvent> segment_events(const std::vector<CrossingEvent>& crossings,
                                                  const std::vector<TurningEvent>& turns,
                                                  double tau_begin, double tau_end) {
    std::vector<TransportEvent> events;
    EventSegmenter seg(tau_begin, [&](const TransportEvent& ev) { events.push_back(ev); });
    std::size_t ic = 0, it = 0;
    while (ic < crossings.size() || it < turns.size()) {
        const bool take_crossing =
            it >= turns.size() ||
            (ic < crossings.size() && crossings[ic].tau < turns[it].tau);
        if (take_crossing) {
            seg.on_crossing(crossings[ic].tau);
            ++ic;
        } else {
            seg.on_turn(turns[it].tau, turns[it].x);
            ++it;
        }
    }
    seg.finish(tau_end);
    return events;
}

inline std::vector<TransportEvent> segment_events(const Trajectory& traj) {
    return segment_events(traj.crossings, traj.turns, traj.initial.tau,
                          traj.final_state.tau);
}

struct EmptySample : std::runtime_error {
    EmptySample() : std::runtime_error("no events of the requested kind") {}
};

struct InsufficientData : std::runtime_error {
    InsufficientData() : std::runtime_error("fewer than 5 non-empty bins in fit range") {}
};

/// Log-binned probability mass function over the discrete length l >= 1.
/// Bins are exact integers up to 100 and then 10 per decade; empty bins are
/// kept. mass(i) = count/total sums to 1; mass_per_length divides by the
/// number of integers a bin covers, which is what analytic P(l) curves
/// compare against.
class PdfHistogram {
public:
    explicit PdfHistogram(long l_max = 100) {
        for (long l = 1; l <= 101; ++l) edges_.push_back(l);
        extend_to(l_max);
        counts_.assign(edges_.size() - 1, 0);
    }

    void add(long l, std::uint64_t count = 1) {
        if (l < 1) throw std::invalid_argument("PdfHistogram: l must be >= 1");
        if (l >= edges_.back()) {
            extend_to(l);
            counts_.resize(edges_.size() - 1, 0);
        }
        counts_[bin_index(l)] += count;
        total_ += count;
    }

    void merge(const PdfHistogram& other) {
        if (other.edges_.size() > edges_.size()) {
            extend_to(other.edges_.back() - 1);
            counts_.resize(edges_.size() - 1, 0);
        }
        for (std::size_t i = 0; i + 1 < other.edges_.size(); ++i)
            counts_[i] += other.counts_[i];
        total_ += other.total_;
    }

    std::size_t bins() const { return counts_.size(); }
    long bin_lo(std::size_t i) const { return edges_[i]; }
    long bin_hi(std::size_t i) const { return edges_[i + 1]; }  ///< exclusive
    long bin_width(std::size_t i) const { return edges_[i + 1] - edges_[i]; }
    std::uint64_t count(std::size_t i) const { return counts_[i]; }
    std::uint64_t total() const { return total_; }

    double mass(std::size_t i) const {
        return total_ ? double(counts_[i]) / double(total_) : 0.0;
    }
    double mass_per_length(std::size_t i) const { return mass(i) / double(bin_width(i)); }
    /// Geometric center of the integers covered, for log-log fitting.
    double representative_length(std::size_t i) const {
        return std::sqrt(double(bin_lo(i)) * double(bin_hi(i) - 1));
    }

    std::size_t bin_index(long l) const {
        if (l <= 100) return std::size_t(l - 1);
        auto it = std::upper_bound(edges_.begin(), edges_.end(), l);
        return std::size_t(it - edges_.begin()) - 1;
    }

private:
    void extend_to(long l_max) {
        int decile = 1;
        while (edges_.back() <= l_max) {
            const long next =
                static_cast<long>(std::ceil(100.0 * std::pow(10.0, decile / 10.0)));
            if (next > edges_.back()) edges_.push_back(next);
            ++decile;
        }
    }

    std::vector<long> edges_;
    std::vector<std::uint64_t> counts_;
    std::uint64_t total_ = 0;
};

/// Normalized histogram of event lengths of one kind; censored events are
/// excluded (they are counted by censored_events below).
inline PdfHistogram empirical_pdf(const std::vector<TransportEvent>& events,
                                  TransportKind kind) {
    PdfHistogram hist;
    bool any = false;
    for (const auto& ev : events) {
        if (ev.kind != kind || ev.censored || ev.l < 1) continue;
        hist.add(ev.l);
        any = true;
    }
    if (!any) throw EmptySample{};
    return hist;
}

inline std::size_t censored_events(const std::vector<TransportEvent>& events,
                                   TransportKind kind) {
    std::size_t n = 0;
    for (const auto& ev : events)
        if (ev.kind == kind && ev.censored) ++n;
    return n;
}

struct TurnProbability {
    double p_minus;  ///< probability to turn just after crossing a node
    double p_plus;   ///< probability to keep the direction
};

/// Large-jump turn probabilities, P- = arccos(H)/pi < 1/2. Valid for
/// energies in the chaotic-transport range (0, 1).
inline TurnProbability turn_probability(EnergyH h) {
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw std::domain_error("turn_probability: H must lie in (0, 1)");
    const double p_minus = std::acos(h.value) / std::numbers::pi;
    return TurnProbability{p_minus, 1.0 - p_minus};
}

/// Geometric PDFs of the large-jump regime: flights P+^l P-, trappings
/// P-^l P+, each normalized over l >= 0.
inline double pdf_large_jump(long l, EnergyH h, TransportKind kind) {
    if (l < 0) throw std::domain_error("pdf_large_jump: l must be >= 0");
    const auto tp = turn_probability(h);
    return kind == TransportKind::Flight ? std::pow(tp.p_plus, double(l)) * tp.p_minus
                                         : std::pow(tp.p_minus, double(l)) * tp.p_plus;
}

/// Parameters of the bounded random walk of theta = arcsin u: exit of a
/// Wiener process with diffusion coefficient D per crossing from the
/// interval theta_c +- theta_max, started at theta0.
struct FirstPassageParams {
    double theta0 = 0.0;
    double theta_c = 0.0;
    double theta_max = 1.0;
    double diffusion = 1e-4;
    int max_terms = 10000;
    double epsilon = 0.0;  ///< boundary offset used by near_boundary()

    static FirstPassageParams near_boundary(double theta_c, double theta_max,
                                            double diffusion, double epsilon) {
        FirstPassageParams fp;
        fp.theta_c = theta_c;
        fp.theta_max = theta_max;
        fp.diffusion = diffusion;
        fp.epsilon = epsilon;
        fp.theta0 = theta_c - theta_max + epsilon;
        return fp;
    }
};

inline void validate(const FirstPassageParams& fp) {
    if (!(fp.theta_max > 0.0) || fp.theta_max > 0.5 * std::numbers::pi + 1e-12)
        throw std::invalid_argument("FirstPassageParams: theta_max must be in (0, pi/2]");
    if (!(fp.diffusion > 0.0))
        throw std::invalid_argument("FirstPassageParams: diffusion must be positive");
    if (std::abs(fp.theta0 - fp.theta_c) > fp.theta_max * (1.0 + 1e-12))
        throw std::invalid_argument("FirstPassageParams: theta0 outside the interval");
}

struct SeriesDiag {
    int terms = 0;
    bool converged = true;  ///< false: TruncationWarning, term cap reached first
};

/// Probability mass to exit the interval at crossing l: the alternating
/// cosine-exponential first-passage series. Terms grow until
/// j ~ theta_max / (pi sqrt(D l)) and then fall off; truncation stops at
/// 1e-16 relative beyond that point.
inline double first_passage_pdf(double l, const FirstPassageParams& fp,
                                SeriesDiag* diag = nullptr) {
    validate(fp);
    if (!(l > 0.0)) return 0.0;
    const double theta = fp.theta_max;
    const double pi = std::numbers::pi;
    const double decay = pi * pi * fp.diffusion * l / (theta * theta);
    const double cos_arg = pi * (fp.theta0 - fp.theta_c) / theta;
    const double j_peak = theta / (pi * std::sqrt(fp.diffusion * l));

    double sum = 0.0;
    double max_abs = 0.0;
    int terms = 0;
    bool converged = false;
    for (int j = 0; j < fp.max_terms; ++j) {
        const double jh = j + 0.5;
        const double term = (j % 2 == 0 ? 1.0 : -1.0) * jh * std::cos(jh * cos_arg) *
                            std::exp(-jh * jh * decay);
        sum += term;
        max_abs = std::max(max_abs, std::abs(term));
        terms = j + 1;
        if (double(j) > j_peak && std::abs(term) < 1e-16 * std::max(max_abs, 1e-300)) {
            converged = true;
            break;
        }
    }
    if (diag != nullptr) {
        diag->terms = terms;
        diag->converged = converged;
    }
    const double mass = 2.0 * pi * fp.diffusion / (theta * theta) * sum;
    return std::max(mass, 0.0);
}

/// Per-crossing diffusion coefficient of theta, D = Delta^2 pi / (4 w_r p_n);
/// equals K^2/4 for jump amplitude K.
inline double diffusion_coefficient(const LatticeParams& params, double p_node_value) {
    if (!(p_node_value > 0.0))
        throw std::domain_error("diffusion_coefficient: p_node must be positive");
    return params.delta * params.delta * std::numbers::pi /
           (4.0 * params.omega_r * p_node_value);
}

inline double flight_arc_halfwidth(EnergyH h) { return std::asin(h.value); }
inline double trapping_arc_halfwidth(EnergyH h) { return std::acos(h.value); }

namespace detail {

/// Sum_j (j+1/2)^2 exp(-(j+1/2)^2 c) with the same truncation policy as the
/// first-passage series.
inline double boundary_series(double c, int max_terms, SeriesDiag* diag) {
    double sum = 0.0;
    double max_term = 0.0;
    const double j_peak = c > 0.0 ? 1.0 / std::sqrt(c) : double(max_terms);
    int terms = 0;
    bool converged = false;
    for (int j = 0; j < max_terms; ++j) {
        const double jh = j + 0.5;
        const double term = jh * jh * std::exp(-jh * jh * c);
        sum += term;
        max_term = std::max(max_term, term);
        terms = j + 1;
        if (double(j) > j_peak && term < 1e-16 * std::max(max_term, 1e-300)) {
            converged = true;
            break;
        }
    }
    if (diag != nullptr) {
        diag->terms = std::max(diag->terms, terms);
        diag->converged = diag->converged && converged;
    }
    return sum;
}

}  // namespace detail

/// Small-jump-regime PDF for a near-boundary start: the boundary-expanded
/// series with normalization constant Q. theta_max is arcsin H for flights
/// and arccos H for trappings.
inline double pdf_small_jump(long l, EnergyH h, double diffusion, TransportKind kind,
                             double q, SeriesDiag* diag = nullptr) {
    if (l < 1) return 0.0;
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw std::domain_error("pdf_small_jump: H must lie in (0, 1)");
    const double theta = kind == TransportKind::Flight ? flight_arc_halfwidth(h)
                                                       : trapping_arc_halfwidth(h);
    const double c = std::numbers::pi * std::numbers::pi * diffusion * double(l) /
                     (theta * theta);
    return q / (theta * theta * theta) * detail::boundary_series(c, 10000, diag);
}

enum class NormalizationMode {
    PerKind,  ///< each PDF sums to 1 over l >= 1 on its own
    Shared,   ///< one Q for both kinds, average total mass 1
};

/// Normalization constant Q of the small-jump PDFs. The sums over l >= 1 are
/// geometric in l for each series index, so Q comes out in closed form.
inline double small_jump_normalization(EnergyH h, double diffusion, TransportKind kind,
                                       NormalizationMode mode = NormalizationMode::PerKind) {
    if (!(h.value > 0.0) || !(h.value < 1.0))
        throw std::domain_error("small_jump_normalization: H must lie in (0, 1)");
    if (!(diffusion > 0.0))
        throw std::domain_error("small_jump_normalization: D must be positive");
    auto total_over_q = [&](TransportKind k) {
        const double theta = k == TransportKind::Flight ? flight_arc_halfwidth(h)
                                                        : trapping_arc_halfwidth(h);
        const double c = std::numbers::pi * std::numbers::pi * diffusion / (theta * theta);
        double sum = 0.0;
        for (int j = 0;; ++j) {
            const double jh = j + 0.5;
            const double r = std::exp(-jh * jh * c);
            if (r >= 1.0) throw std::domain_error("small_jump_normalization: D too small");
            const double term = jh * jh * r / (1.0 - r);
            sum += term;
            if (term < 1e-16 * sum && double(j) > 1.0 / std::sqrt(c)) break;
            if (j > 2000000) break;
        }
        return sum / (theta * theta * theta);
    };
    if (mode == NormalizationMode::PerKind) return 1.0 / total_over_q(kind);
    return 2.0 / (total_over_q(TransportKind::Flight) + total_over_q(TransportKind::Trapping));
}

/// Power-law head of the small-jump PDFs, Q pi^-2.5 D^-1.5 l^-1.5 / 4,
/// valid for l well below theta_max^2 / D.
inline double power_law_head(double l, double diffusion, double q) {
    return 0.25 * q * std::pow(std::numbers::pi, -2.5) * std::pow(diffusion, -1.5) *
           std::pow(l, -1.5);
}

/// Minimum number of crossings needed to traverse an arc of half-width
/// theta_max: l_cr = theta_max / sqrt(D). Marks the end of the -1.5 head;
/// l_cr^2 marks the onset of the purely exponential tail.
inline double l_critical(double theta_max, double diffusion) {
    if (!(diffusion > 0.0)) throw std::domain_error("l_critical: D must be positive");
    return theta_max / std::sqrt(diffusion);
}

enum class TailModel { PowerLaw, Exponential };

struct TailFit {
    double coefficient = 0.0;  ///< log-log slope, or log-linear rate
    double intercept = 0.0;
    double stderr_coefficient = 0.0;
    double r_squared = 0.0;
    int n_bins = 0;
};

/// Least-squares fit of log mass-per-length against log l (power law) or l
/// (exponential) over the bins whose representative length falls in
/// [l_lo, l_hi]. Requires at least 5 non-empty bins in range.
inline TailFit fit_tail(const PdfHistogram& hist, double l_lo, double l_hi,
                        TailModel model) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < hist.bins(); ++i) {
        const double rep = hist.representative_length(i);
        if (rep < l_lo || rep > l_hi || hist.count(i) == 0) continue;
        xs.push_back(model == TailModel::PowerLaw ? std::log(rep) : rep);
        ys.push_back(std::log(hist.mass_per_length(i)));
    }
    const int n = int(xs.size());
    if (n < 5) throw InsufficientData{};

    double sx = 0, sy = 0;
    for (int i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    TailFit fit;
    fit.n_bins = n;
    fit.coefficient = sxy / sxx;
    fit.intercept = my - fit.coefficient * mx;
    double sse = 0, sst = 0;
    for (int i = 0; i < n; ++i) {
        const double resid = ys[i] - (fit.intercept + fit.coefficient * xs[i]);
        sse += resid * resid;
        sst += (ys[i] - my) * (ys[i] - my);
    }
    fit.r_squared = sst > 0.0 ? 1.0 - sse / sst : 1.0;
    fit.stderr_coefficient = n > 2 ? std::sqrt(sse / double(n - 2) / sxx) : 0.0;
    return fit;
}

}  // namespace latwalk
