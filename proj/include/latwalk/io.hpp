// Plain-text outputs: CSV for tabular data, JSON lines for event streams.
// Doubles are printed shortest-round-trip via to_chars, so a given build
// produces byte-identical files for identical inputs regardless of worker
// count or locale. Files are written to a temporary name and renamed into
// place, so a partial file never appears under the final name.
#pragma once

#include "fractal_scan.hpp"
#include "integrator.hpp"
#include "lyapunov.hpp"
#include "node_map.hpp"
#include "transport_stats.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <system_error>

namespace latwalk {

inline std::string format_double(double value) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Write content under path via a temporary file in the same directory.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.parent_path() / (".tmp-" + path.filename().string());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), std::streamsize(content.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

inline std::string trajectory_csv(const Trajectory& traj) {
    std::string out = "tau,x,p,u,v,z\n";
    for (const auto& s : traj.samples) {
        out += format_double(s.tau);
        out += ',';
        out += format_double(s.x);
        out += ',';
        out += format_double(s.p);
        out += ',';
        out += format_double(s.u);
        out += ',';
        out += format_double(s.v);
        out += ',';
        out += format_double(s.z);
        out += '\n';
    }
    return out;
}

inline std::string reduced_trajectory_csv(const ReducedTrajectory& traj) {
    std::string out = "tau,x,p,u_m,m\n";
    for (const auto& s : traj.samples) {
        out += format_double(s.tau);
        out += ',';
        out += format_double(s.x);
        out += ',';
        out += format_double(s.p);
        out += ',';
        out += format_double(s.u_m);
        out += ',';
        out += std::to_string(s.m);
        out += '\n';
    }
    return out;
}

/// Events as JSON lines: {"kind":...,"m":...,"tau":...,"x":...,"p":...}.
inline std::string events_jsonl(const std::vector<CrossingEvent>& crossings,
                                const std::vector<TurningEvent>& turns) {
    std::string out;
    std::size_t ic = 0, it = 0;
    while (ic < crossings.size() || it < turns.size()) {
        const bool take_crossing =
            it >= turns.size() ||
            (ic < crossings.size() && crossings[ic].tau < turns[it].tau);
        if (take_crossing) {
            const auto& ev = crossings[ic++];
            out += R"({"kind":"crossing","m":)" + std::to_string(ev.m) +
                   ",\"tau\":" + format_double(ev.tau) + ",\"x\":" + format_double(ev.x_node) +
                   ",\"p\":" + format_double(ev.p_at_node) + "}\n";
        } else {
            const auto& ev = turns[it++];
            out += R"({"kind":"turn","tau":)" + format_double(ev.tau) +
                   ",\"x\":" + format_double(ev.x) + "}\n";
        }
    }
    return out;
}

inline std::string histogram_csv(const PdfHistogram& hist) {
    std::string out = "l_lo,l_hi,count,mass\n";
    for (std::size_t i = 0; i < hist.bins(); ++i) {
        out += std::to_string(hist.bin_lo(i));
        out += ',';
        out += std::to_string(hist.bin_hi(i));
        out += ',';
        out += std::to_string(hist.count(i));
        out += ',';
        out += format_double(hist.mass(i));
        out += '\n';
    }
    return out;
}

/// Analytic PDF curve over discrete l.
inline std::string curve_csv(const std::vector<std::pair<long, double>>& points) {
    std::string out = "l,mass\n";
    for (const auto& [l, mass] : points) {
        out += std::to_string(l);
        out += ',';
        out += format_double(mass);
        out += '\n';
    }
    return out;
}

inline std::string lambda_grid_csv(const LambdaGrid& grid) {
    // rows: one per delta; columns: p0 axis; failed cells print nan
    std::string out = "delta\\p0";
    for (double p0 : grid.p0_axis) {
        out += ',';
        out += format_double(p0);
    }
    out += '\n';
    for (std::size_t i = 0; i < grid.delta_axis.size(); ++i) {
        out += format_double(grid.delta_axis[i]);
        for (std::size_t j = 0; j < grid.p0_axis.size(); ++j) {
            out += ',';
            const auto& cell = grid.at(i, j);
            out += cell.status == CellStatus::Ok ? format_double(cell.lambda) : "nan";
        }
        out += '\n';
    }
    return out;
}

inline const char* exit_side_name(ExitSide side) {
    switch (side) {
        case ExitSide::Left: return "left";
        case ExitSide::Right: return "right";
        default: return "none";
    }
}

/// Flattened scan records over all refinement levels.
inline void scan_csv_append(std::string& out, const ScanInterval& interval,
                            const std::string& parent_id) {
    const std::string id = parent_id.empty() ? "0" : parent_id;
    for (const auto& rec : interval.records) {
        out += format_double(rec.delta);
        out += ',';
        out += rec.censored ? "censored" : format_double(rec.exit_time);
        out += ',';
        out += std::to_string(rec.m);
        out += ',';
        out += exit_side_name(rec.exit_side);
        out += ',';
        out += std::to_string(interval.level);
        out += ',';
        out += id;
        out += '\n';
    }
    for (std::size_t c = 0; c < interval.children.size(); ++c)
        scan_csv_append(out, interval.children[c], id + "." + std::to_string(c));
}

inline std::string scan_csv(const ScanInterval& root) {
    std::string out = "delta,T_or_censored,m,exit_side,level,parent_interval_id\n";
    scan_csv_append(out, root, "");
    return out;
}

}  // namespace latwalk
