#pragma once

// Backward dynamic programming over the joint law of (S, Delta).
//
// One step consumes the state for (S_{k+1}, Delta_k), adds the independent
// load s_k to the flow and applies Delta_{k-1} = max(0, Delta_k + rho_k S_k):
//
//   1. mass on the diagonal is folded into the 2D grid (or into 2D atoms);
//   2. every part is convolved with the load law along S;
//   3. the result is remapped onto a fresh S axis sized to the surviving mass;
//   4. each S column is sheared along Delta by rho_k * S, and whatever lands
//      at or below zero collapses onto the Delta = 0 line.
//
// The zero line convolved with the load splits by the sign of S into the new
// zero line (S <= 0) and the new diagonal (S > 0). Point masses are carried
// exactly whenever both operands are atomic.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "vdrop/errors.hpp"
#include "vdrop/feeder.hpp"
#include "vdrop/grid.hpp"
#include "vdrop/joint_state.hpp"
#include "vdrop/load_density.hpp"
#include "vdrop/mixed_density.hpp"

namespace vdrop {

enum class Normalization { ReportOnly, Renormalize };

struct DpConfig {
    std::size_t grid_s = 512;
    std::size_t grid_delta = 512;
    /// Mass allowed to be cut from the tails at each stage (split between the
    /// load tails, the two S tails and the upper Delta tail).
    double tail_tolerance = 1e-6;
    Normalization normalization = Normalization::ReportOnly;
    /// Worker threads inside a stage. Results do not depend on this value.
    std::size_t threads = 1;

    void validate() const {
        if (grid_s < 16) throw ConfigError("grid_s", "must be at least 16");
        if (grid_delta < 16) throw ConfigError("grid_delta", "must be at least 16");
        if (!(tail_tolerance > 0.0 && tail_tolerance <= 1e-2))
            throw ConfigError("tail_tolerance", "must lie in (0, 1e-2]");
        if (threads == 0) throw ConfigError("threads", "must be at least 1");
    }
};

struct StageLog {
    std::size_t stage = 0;
    std::size_t bus = 0;
    double mass_in = 0.0;
    double mass_out = 0.0;
    /// Mass deliberately cut (tails beyond the grid domains).
    double truncated = 0.0;
    /// mass_in - truncated - mass_out: round-off and clamping.
    double unlogged = 0.0;
    double seconds = 0.0;
};

struct DpReport {
    JointState final_state;
    DropDistribution drop;
    std::vector<StageLog> stages;
    std::size_t stages_executed = 0;
    double total_seconds = 0.0;
    /// Mass of the final state before any renormalization.
    double final_mass = 0.0;

    double logged_truncation() const {
        double t = 0.0;
        for (const auto& s : stages) t += s.truncated;
        return t;
    }

    double unlogged_discrepancy() const {
        double t = 0.0;
        for (const auto& s : stages) t += s.unlogged;
        return t;
    }
};

namespace detail {

/// Static partition of [0, n) over `threads` workers; fn(i) must only touch data owned by i.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

/// Quantile-based range holding all but `tail` of the load mass (exact support
/// ends are used where the support is bounded).
inline std::pair<double, double> load_range(const LoadDensity& load, double tail) {
    auto [lo, hi] = load.support();
    if (!std::isfinite(lo)) lo = load.quantile(0.5 * tail);
    if (!std::isfinite(hi)) hi = load.quantile(1.0 - 0.5 * tail);
    return {lo, hi};
}

/// Load law expressed on the S lattice of spacing h: offsets are cell indices,
/// a continuous cell j is centred at j*h; atoms are kept exactly as well as
/// split between two neighbouring offsets for use against gridded operands.
struct LatticeLoad {
    std::int64_t first = 0;
    std::vector<double> kernel;        // masses at offsets first, first+1, ...
    std::int64_t cont_first = 0;
    std::vector<double> cont_masses;   // continuous part only, cells centred at (cont_first+i)*h
    std::vector<Atom> atoms;
    double tail = 0.0;
};

inline LatticeLoad lattice_load(const LoadDensity& load, double h, double tail_budget) {
    LatticeLoad out;
    if (load.is_point_mass()) {
        out.atoms.push_back({load.atom_location(), 1.0});
    } else {
        const auto [qlo, qhi] = load_range(load, tail_budget);
        const auto j_lo = static_cast<std::int64_t>(std::floor(qlo / h + 0.5));
        const auto j_hi = std::max(j_lo, static_cast<std::int64_t>(std::floor(qhi / h + 0.5)));
        out.cont_first = j_lo;
        out.cont_masses.resize(static_cast<std::size_t>(j_hi - j_lo + 1));
        double prev = load.cdf((static_cast<double>(j_lo) - 0.5) * h);
        double kept = 0.0;
        for (std::size_t i = 0; i < out.cont_masses.size(); ++i) {
            const double next = load.cdf((static_cast<double>(j_lo + static_cast<std::int64_t>(i)) + 0.5) * h);
            out.cont_masses[i] = std::max(0.0, next - prev);
            kept += out.cont_masses[i];
            prev = next;
        }
        out.tail = std::max(0.0, 1.0 - kept);
    }
    if (h > 0.0) {
        std::int64_t lo = INT64_MAX;
        std::int64_t hi = INT64_MIN;
        if (!out.cont_masses.empty()) {
            lo = out.cont_first;
            hi = out.cont_first + static_cast<std::int64_t>(out.cont_masses.size()) - 1;
        }
        for (const auto& a : out.atoms) {
            const auto n = static_cast<std::int64_t>(std::floor(a.location / h));
            lo = std::min(lo, n);
            hi = std::max(hi, n + 1);
        }
        out.first = lo;
        out.kernel.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
        for (std::size_t i = 0; i < out.cont_masses.size(); ++i)
            out.kernel[static_cast<std::size_t>(out.cont_first - lo) + i] += out.cont_masses[i];
        for (const auto& a : out.atoms) {
            const double q = a.location / h;
            const auto n = static_cast<std::int64_t>(std::floor(q));
            const double f = q - static_cast<double>(n);
            out.kernel[static_cast<std::size_t>(n - lo)] += (1.0 - f) * a.mass;
            out.kernel[static_cast<std::size_t>(n + 1 - lo)] += f * a.mass;
        }
    }
    return out;
}

/// Axis with `cells` cells of spacing >= min_h covering [a, b], with zero on a cell edge.
inline Axis lattice_axis(double a, double b, std::size_t cells, double min_h) {
    double h = std::max(min_h, (b - a) / static_cast<double>(cells - 1));
    if (!(h > 0.0)) h = 1.0;
    const double lo = std::floor(a / h) * h;
    return Axis{lo, h, cells};
}

/// Cells [lo, hi) on the global lattice of spacing h, as an Axis.
inline Axis index_axis(std::int64_t lo, std::int64_t hi_exclusive, double h) {
    return Axis{static_cast<double>(lo) * h, h, static_cast<std::size_t>(hi_exclusive - lo)};
}

inline std::int64_t lattice_index(double x, double h) { return static_cast<std::int64_t>(std::llround(x / h)); }

}  // namespace detail

/// One backward stage: state for (S_{k+1}, Delta_k) -> state for (S_k, Delta_{k-1}).
inline JointState dp_step(const JointState& prev, const LoadDensity& load, const LineSegment& link,
                          const DpConfig& cfg, StageLog* log = nullptr) {
    using detail::index_axis;
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const double mass_in = prev.total_mass();
    const double tol_part = cfg.tail_tolerance / 3.0;
    const double rho = link.rho;
    const bool load_continuous = !load.is_point_mass();
    double truncated = 0.0;

    // ---- 1. pre-step parts on the previous axes: fold the diagonal into 2D
    std::vector<JointAtom> atoms2d = prev.continuous_atoms;
    for (const auto& a : prev.diagonal_atoms) atoms2d.push_back({a.location, prev.slope * a.location, a.mass});
    std::vector<Atom> atoms_zero = prev.zero_atoms;

    const bool prev_grid = prev.has_grid();
    Axis s_ax = prev.s_axis;
    Axis d_ax = prev.delta_axis;
    std::vector<double> plane;  // masses, rows over d_ax, cols over s_ax
    std::vector<double> zero_masses;

    double d_needed = 0.0;
    if (load_continuous)
        for (const auto& a : atoms2d) d_needed = std::max(d_needed, a.delta);
    if (prev_grid) d_needed = std::max(d_needed, prev.slope * s_ax.hi());
    const bool need_plane = prev_grid || (load_continuous && !atoms2d.empty());
    if (need_plane) {
        if (d_ax.empty()) d_ax = Axis::over(0.0, std::max(d_needed, 1e-300) * (1.0 + 1e-9), cfg.grid_delta);
        if (d_needed > d_ax.hi())
            d_ax.cells = static_cast<std::size_t>(std::ceil(d_needed / d_ax.h * (1.0 + 1e-12))) + 1;
    }

    if (prev_grid) {
        const std::size_t ns = s_ax.cells;
        plane.assign(d_ax.cells * ns, 0.0);
        const double area = s_ax.h * prev.delta_axis.h;
        for (std::size_t r = 0; r < prev.delta_axis.cells; ++r)
            for (std::size_t c = 0; c < ns; ++c) plane[r * ns + c] = prev.continuous[r * ns + c] * area;
        std::vector<double> column(d_ax.cells);
        for (std::size_t c = 0; c < ns; ++c) {
            const double m = prev.diagonal[c] * s_ax.h;
            if (m == 0.0) continue;
            std::fill(column.begin(), column.end(), 0.0);
            truncated += deposit_interval(prev.slope * s_ax.edge(c), prev.slope * s_ax.edge(c + 1), m, d_ax, column);
            for (std::size_t r = 0; r < d_ax.cells; ++r) plane[r * ns + c] += column[r];
        }
        zero_masses.resize(ns);
        for (std::size_t c = 0; c < ns; ++c) zero_masses[c] = prev.zero_line[c] * s_ax.h;
    }

    // ---- 2. common S lattice; coarsen the previous grid when the load is wider
    double h = 0.0;
    double load_width = 0.0;
    if (load_continuous) {
        const auto [qlo, qhi] = detail::load_range(load, tol_part);
        load_width = qhi - qlo;
    }
    if (prev_grid) {
        h = s_ax.h;
        const double wanted = load_width / static_cast<double>(cfg.grid_s - 1);
        if (wanted > h * (1.0 + 1e-12)) {
            const Axis coarse = detail::lattice_axis(s_ax.lo, s_ax.hi(), cfg.grid_s, wanted);
            const Axis fitted{coarse.lo, coarse.h,
                              static_cast<std::size_t>(std::ceil((s_ax.hi() - coarse.lo) / coarse.h - 1e-9))};
            std::vector<double> coarse_plane(d_ax.cells * fitted.cells, 0.0);
            for (std::size_t r = 0; r < d_ax.cells; ++r)
                truncated += remap_masses(s_ax, std::span<const double>(plane).subspan(r * s_ax.cells, s_ax.cells),
                                          fitted, std::span<double>(coarse_plane).subspan(r * fitted.cells, fitted.cells));
            std::vector<double> coarse_zero(fitted.cells, 0.0);
            truncated += remap_masses(s_ax, zero_masses, fitted, coarse_zero);
            plane = std::move(coarse_plane);
            zero_masses = std::move(coarse_zero);
            s_ax = fitted;
            h = s_ax.h;
        }
    } else if (load_continuous) {
        h = load_width / static_cast<double>(cfg.grid_s - 1);
        if (!(h > 0.0)) h = 1.0;
    }

    // ---- 3. load on the lattice and the convolution along S
    const detail::LatticeLoad lat = detail::lattice_load(load, h, tol_part);
    truncated += mass_in * lat.tail;

    std::vector<JointAtom> new_atoms2d;  // (S_k, Delta_k) before the shear
    std::vector<Atom> new_zero_atoms;    // on Delta_k = 0
    for (const auto& a : atoms2d)
        for (const auto& b : lat.atoms) new_atoms2d.push_back({a.s + b.location, a.delta, a.mass * b.mass});
    for (const auto& a : atoms_zero)
        for (const auto& b : lat.atoms) new_zero_atoms.push_back({a.location + b.location, a.mass * b.mass});

    const bool any_grid = prev_grid || (load_continuous && (!atoms2d.empty() || !atoms_zero.empty()));

    JointState next;
    next.stage = prev.stage == 0 ? 0 : prev.stage - 1;
    next.slope = rho;

    std::vector<double> plane_out;   // masses after the S shear, rows over d_ax, cols over new S axis
    std::vector<double> zero_out;    // zero-line masses on the new S axis
    std::vector<double> diag_out;
    Axis s_new;

    if (any_grid) {
        // work lattice extent, in global cell indices
        std::int64_t k_min = INT64_MAX;
        std::int64_t k_max = INT64_MIN;
        const std::int64_t n0 = prev_grid ? detail::lattice_index(s_ax.lo, h) : 0;
        const std::int64_t kern_hi = lat.first + static_cast<std::int64_t>(lat.kernel.size()) - 1;
        if (prev_grid) {
            k_min = n0 + lat.first;
            k_max = n0 + static_cast<std::int64_t>(s_ax.cells) - 1 + kern_hi;
        }
        const auto cont_span = [&](double shift) {
            const double a = shift + (static_cast<double>(lat.cont_first) - 0.5) * h;
            const double b =
                shift + (static_cast<double>(lat.cont_first + static_cast<std::int64_t>(lat.cont_masses.size())) - 0.5) * h;
            return std::pair{static_cast<std::int64_t>(std::floor(a / h)), static_cast<std::int64_t>(std::floor(b / h))};
        };
        if (load_continuous) {
            for (const auto& a : atoms2d) {
                const auto [lo, hi] = cont_span(a.s);
                k_min = std::min(k_min, lo);
                k_max = std::max(k_max, hi);
            }
            for (const auto& a : atoms_zero) {
                const auto [lo, hi] = cont_span(a.location);
                k_min = std::min(k_min, lo);
                k_max = std::max(k_max, hi);
            }
        }
        const Axis work = index_axis(k_min, k_max + 1, h);
        const std::size_t nw = work.cells;
        const std::size_t nrows = need_plane ? d_ax.cells : 0;

        std::vector<double> work_plane(nrows * nw, 0.0);
        std::vector<double> work_zero(nw, 0.0);

        if (prev_grid) {
            const KernelConvolver conv(lat.kernel, s_ax.cells);
            const std::size_t ns = s_ax.cells;
            const auto base = static_cast<std::size_t>(n0 + lat.first - k_min);
            std::vector<double> row_clamped(nrows + 1, 0.0);
            const auto convolve_row = [&](std::span<const double> row, std::span<double> dst, double& clamp_acc) {
                std::size_t first = 0;
                while (first < row.size() && row[first] == 0.0) ++first;
                if (first == row.size()) return;
                std::size_t last = row.size() - 1;
                while (row[last] == 0.0) --last;
                const auto sig = row.subspan(first, last - first + 1);
                std::vector<double> out(sig.size() + lat.kernel.size() - 1);
                clamp_acc += conv.convolve(sig, out);
                for (std::size_t i = 0; i < out.size(); ++i) dst[base + first + i] += out[i];
            };
            detail::parallel_for(nrows, cfg.threads, [&](std::size_t r) {
                convolve_row(std::span<const double>(plane).subspan(r * ns, ns),
                             std::span<double>(work_plane).subspan(r * nw, nw), row_clamped[r]);
            });
            convolve_row(zero_masses, work_zero, row_clamped[nrows]);
        }

        if (load_continuous) {
            // exact cell masses of the load shifted by `shift`, over the kept load range
            const double keep_lo = (static_cast<double>(lat.cont_first) - 0.5) * h;
            const double keep_hi =
                (static_cast<double>(lat.cont_first + static_cast<std::int64_t>(lat.cont_masses.size())) - 0.5) * h;
            const auto deposit_load = [&](double shift, double mass, std::span<double> dst) {
                const double a = keep_lo + shift;
                const double b = keep_hi + shift;
                const auto i0 = static_cast<std::size_t>(std::clamp(std::floor((a - work.lo) / h), 0.0, double(nw - 1)));
                const auto i1 = static_cast<std::size_t>(std::clamp(std::floor((b - work.lo) / h), 0.0, double(nw - 1)));
                double placed = 0.0;
                double prev_cdf = load.cdf(a - shift);
                for (std::size_t i = i0; i <= i1; ++i) {
                    const double right = i == i1 ? b : std::min(b, work.edge(i + 1));
                    const double next_cdf = load.cdf(right - shift);
                    const double m = std::max(0.0, next_cdf - prev_cdf) * mass;
                    dst[i] += m;
                    placed += m;
                    prev_cdf = next_cdf;
                }
                truncated += std::max(0.0, (load.cdf(keep_hi) - load.cdf(keep_lo)) * mass - placed);
            };
            std::vector<double> line(nw);
            for (const auto& a : atoms2d) {
                std::fill(line.begin(), line.end(), 0.0);
                deposit_load(a.s, a.mass, line);
                // linear split between the two nearest row centres
                const double t = std::clamp(a.delta / d_ax.h - 0.5, 0.0, static_cast<double>(d_ax.cells - 1));
                const auto r0 = std::min<std::size_t>(static_cast<std::size_t>(t), d_ax.cells - 1);
                const std::size_t r1 = std::min(r0 + 1, d_ax.cells - 1);
                const double f = r1 == r0 ? 0.0 : t - static_cast<double>(r0);
                for (std::size_t i = 0; i < nw; ++i) {
                    if (line[i] == 0.0) continue;
                    work_plane[r0 * nw + i] += (1.0 - f) * line[i];
                    work_plane[r1 * nw + i] += f * line[i];
                }
            }
            for (const auto& a : atoms_zero) deposit_load(a.location, a.mass, work_zero);
        }

        // ---- 4. choose the new S axis from the S marginal and remap
        std::vector<double> col_mass(work_zero);
        for (std::size_t r = 0; r < nrows; ++r)
            for (std::size_t i = 0; i < nw; ++i) col_mass[i] += work_plane[r * nw + i];
        const double grid_mass = std::accumulate(col_mass.begin(), col_mass.end(), 0.0);
        if (grid_mass > 0.0) {
            std::size_t left = 0;
            double acc = 0.0;
            while (left < nw && acc + col_mass[left] <= 0.5 * tol_part) acc += col_mass[left++];
            std::size_t right = nw;
            acc = 0.0;
            while (right > left + 1 && acc + col_mass[right - 1] <= 0.5 * tol_part) acc += col_mass[--right];
            if (left >= right) {
                left = 0;
                right = nw;
            }
            s_new = detail::lattice_axis(work.edge(left), work.edge(right), cfg.grid_s, h);
            const std::size_t ns = s_new.cells;

            // zero line splits by the sign of S: cells left of the lattice origin are S <= 0
            zero_out.assign(ns, 0.0);
            diag_out.assign(ns, 0.0);
            const auto origin = static_cast<std::size_t>(std::clamp<std::int64_t>(-k_min, 0, static_cast<std::int64_t>(nw)));
            std::vector<double> neg(work_zero.begin(), work_zero.begin() + static_cast<std::ptrdiff_t>(origin));
            std::vector<double> pos(work_zero.begin() + static_cast<std::ptrdiff_t>(origin), work_zero.end());
            if (!neg.empty()) truncated += remap_masses(Axis{work.lo, h, neg.size()}, neg, s_new, zero_out);
            if (!pos.empty()) truncated += remap_masses(Axis{work.edge(origin), h, pos.size()}, pos, s_new, diag_out);

            std::vector<double> remapped(nrows * ns, 0.0);
            std::vector<double> row_lost(nrows, 0.0);
            detail::parallel_for(nrows, cfg.threads, [&](std::size_t r) {
                row_lost[r] = remap_masses(work, std::span<const double>(work_plane).subspan(r * nw, nw), s_new,
                                           std::span<double>(remapped).subspan(r * ns, ns));
            });
            for (double l : row_lost) truncated += l;

            // ---- 5. shear along Delta by rho * S, clipping at zero
            if (nrows > 0) {
                double max_shift = 0.0;
                for (std::size_t c = 0; c < ns; ++c) max_shift = std::max(max_shift, rho * s_new.center(c));
                const double top = d_ax.hi() + max_shift;
                const Axis provisional = Axis::over(0.0, top > 0.0 ? top : 1.0, 4 * cfg.grid_delta);
                std::vector<double> marginal(provisional.cells, 0.0);
                for (std::size_t c = 0; c < ns; ++c) {
                    const double shift = rho * s_new.center(c);
                    for (std::size_t r = 0; r < nrows; ++r) {
                        const double m = remapped[r * ns + c];
                        if (m == 0.0) continue;
                        deposit_interval(d_ax.edge(r) + shift, d_ax.edge(r + 1) + shift, m, provisional, marginal);
                    }
                }
                std::size_t keep = provisional.cells;
                double tail = 0.0;
                while (keep > 1 && tail + marginal[keep - 1] <= tol_part) tail += marginal[--keep];
                double d_hi = provisional.edge(keep);
                d_hi = std::max(d_hi, rho * s_new.hi());
                next.delta_axis = Axis::over(0.0, d_hi, cfg.grid_delta);
            } else {
                next.delta_axis = Axis::over(0.0, std::max(rho * s_new.hi(), rho * s_new.h), cfg.grid_delta);
            }
            const Axis& d_new = next.delta_axis;
            plane_out.assign(d_new.cells * ns, 0.0);
            std::vector<double> col_lost(ns, 0.0);
            detail::parallel_for(ns, cfg.threads, [&](std::size_t c) {
                const double shift = rho * s_new.center(c);
                std::vector<double> column(d_new.cells, 0.0);
                double clip = 0.0;
                double lost = 0.0;
                for (std::size_t r = 0; r < nrows; ++r) {
                    const double m = remapped[r * ns + c];
                    if (m == 0.0) continue;
                    const double a = d_ax.edge(r) + shift;
                    const double b = d_ax.edge(r + 1) + shift;
                    double above = m;
                    if (a < 0.0) {
                        const double below = b <= 0.0 ? m : m * (-a) / (b - a);
                        clip += below;
                        above = m - below;
                        if (above <= 0.0) continue;
                        lost += deposit_interval(0.0, b, above, d_new, column);
                    } else {
                        lost += deposit_interval(a, b, above, d_new, column);
                    }
                }
                for (std::size_t r = 0; r < d_new.cells; ++r) plane_out[r * ns + c] = column[r];
                zero_out[c] += clip;
                col_lost[c] = lost;
            });
            for (double l : col_lost) truncated += l;
        }
    }

    // ---- 6. atoms through the shear
    for (const auto& a : new_atoms2d) {
        const double d = a.delta + rho * a.s;
        if (d > 0.0) next.continuous_atoms.push_back({a.s, d, a.mass});
        else next.zero_atoms.push_back({a.s, a.mass});
    }
    for (const auto& a : new_zero_atoms) {
        const double d = 0.0 + rho * a.location;
        if (d > 0.0) next.diagonal_atoms.push_back(a);
        else next.zero_atoms.push_back(a);
    }
    const auto merge = [](std::vector<Atom>& v) {
        std::sort(v.begin(), v.end(), [](const Atom& x, const Atom& y) { return x.location < y.location; });
        std::vector<Atom> out;
        for (const auto& a : v) {
            if (!out.empty() && out.back().location == a.location) out.back().mass += a.mass;
            else out.push_back(a);
        }
        v = std::move(out);
    };
    merge(next.zero_atoms);
    merge(next.diagonal_atoms);
    std::sort(next.continuous_atoms.begin(), next.continuous_atoms.end(), [](const JointAtom& x, const JointAtom& y) {
        return x.s < y.s || (x.s == y.s && x.delta < y.delta);
    });
    {
        std::vector<JointAtom> merged;
        for (const auto& a : next.continuous_atoms) {
            if (!merged.empty() && merged.back().s == a.s && merged.back().delta == a.delta) merged.back().mass += a.mass;
            else merged.push_back(a);
        }
        next.continuous_atoms = std::move(merged);
    }

    // ---- 7. masses -> densities
    if (!s_new.empty()) {
        next.s_axis = s_new;
        const double area = s_new.h * next.delta_axis.h;
        next.continuous = std::move(plane_out);
        for (double& v : next.continuous) v /= area;
        next.zero_line = std::move(zero_out);
        next.diagonal = std::move(diag_out);
        for (double& v : next.zero_line) v /= s_new.h;
        for (double& v : next.diagonal) v /= s_new.h;
    }

    const double mass_out = next.total_mass();
    const double unlogged = mass_in - truncated - mass_out;
    if (!std::isfinite(mass_out) || std::abs(unlogged) > 100.0 * cfg.tail_tolerance)
        throw MassLossError("dp_step: unaccounted mass change " + std::to_string(unlogged) + " at stage " +
                            std::to_string(next.stage) + " (grid domain too small or numerical blowup)");
    if (log) {
        log->stage = next.stage;
        log->bus = next.stage + 1;
        log->mass_in = mass_in;
        log->mass_out = mass_out;
        log->truncated = truncated;
        log->unlogged = unlogged;
        log->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return next;
}

/// State after the last bus: its load is the flow into the line end and the
/// drop measured from bus N-1 is max(0, rho_N * s_N).
inline JointState init_terminal_state(const FeederSpec& spec, const DpConfig& cfg, StageLog* log = nullptr) {
    validate(spec);
    const std::size_t n = spec.bus_count();
    return dp_step(terminal_state(n), spec.loads[n - 1], spec.segments[n - 1], cfg, log);
}

inline DpReport run(const FeederSpec& spec, const DpConfig& cfg) {
    validate(spec);
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = spec.bus_count();
    DpReport report;
    report.stages.reserve(n);
    StageLog log;
    JointState state = init_terminal_state(spec, cfg, &log);
    report.stages.push_back(log);
    for (std::size_t k = n - 1; k >= 1; --k) {
        state = dp_step(state, spec.loads[k - 1], spec.segments[k - 1], cfg, &log);
        report.stages.push_back(log);
    }
    report.stages_executed = report.stages.size();
    report.final_mass = state.total_mass();
    if (cfg.normalization == Normalization::Renormalize && report.final_mass > 0.0)
        state.scale(1.0 / report.final_mass);
    report.drop = marginal_drop(state);
    report.final_state = std::move(state);
    report.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace vdrop
