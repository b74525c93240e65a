#pragma once

// Deterministic power flow on the radial line.
//
// Indexing: buses 0..N, bus 0 is the substation held at V0. Link k (1..N) joins
// bus k-1 to bus k and carries the flow S_k into bus k, so S_k = S_{k+1} + s_k
// with S_{N+1} = 0 and, in the linear model, V_k = V_{k-1} - rho_k * S_k.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vdrop/errors.hpp"
#include "vdrop/feeder.hpp"

namespace vdrop {

/// Arrays indexed by bus (voltage, size N+1) or by link (flows, size N+2 with
/// entry 0 unused and entry N+1 the virtual end link, always zero).
struct FlowProfile {
    std::vector<double> voltage;
    std::vector<double> real_flow;
    std::vector<double> reactive_flow;
    std::vector<double> combined_flow;
    int iterations = 0;
};

struct DropResult {
    /// drop[n] = V_n - min_{n <= k <= N} V_k for n = 0..N.
    std::vector<double> drop;
    double max_drop = 0.0;
    /// Bus holding the minimum voltage (0 when no bus dips below V0).
    std::size_t argmin_bus = 0;
};

inline constexpr int kSweepIterationCap = 100;
inline constexpr double kSweepDefaultTolerance = 1e-10;

namespace detail {

inline void check_length(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(want) + " entries, got " +
                                    std::to_string(got));
}

}  // namespace detail

inline FlowProfile solve_linear(const FeederSpec& spec, std::span<const double> loads) {
    const std::size_t n = spec.bus_count();
    detail::check_length(loads.size(), n, "solve_linear loads");
    FlowProfile out;
    out.combined_flow.assign(n + 2, 0.0);
    out.voltage.assign(n + 1, spec.base_voltage);
    for (std::size_t k = n; k >= 1; --k) out.combined_flow[k] = out.combined_flow[k + 1] + loads[k - 1];
    for (std::size_t k = 1; k <= n; ++k)
        out.voltage[k] = out.voltage[k - 1] - spec.segments[k - 1].rho * out.combined_flow[k];
    out.real_flow = out.combined_flow;
    out.reactive_flow.assign(n + 2, 0.0);
    return out;
}

/// Backward/forward sweep on the full quadratic DistFlow equations. Losses on
/// link k use the previous iterate's flows and the sending-end voltage V_{k-1}.
inline FlowProfile solve_nonlinear(const FeederSpec& spec, std::span<const double> loads_p,
                                   std::span<const double> loads_q, double tol = kSweepDefaultTolerance,
                                   int max_iterations = kSweepIterationCap) {
    const std::size_t n = spec.bus_count();
    detail::check_length(loads_p.size(), n, "solve_nonlinear loads_p");
    detail::check_length(loads_q.size(), n, "solve_nonlinear loads_q");
    if (!(tol > 0.0)) throw std::invalid_argument("solve_nonlinear: tol must be positive");

    FlowProfile out;
    out.voltage.assign(n + 1, spec.base_voltage);
    out.real_flow.assign(n + 2, 0.0);
    out.reactive_flow.assign(n + 2, 0.0);
    out.combined_flow.assign(n + 2, 0.0);

    for (int it = 1; it <= max_iterations; ++it) {
        for (std::size_t k = n; k >= 1; --k) {
            const auto& seg = spec.segments[k - 1];
            const double v_send = out.voltage[k - 1];
            const double p_old = out.real_flow[k];
            const double q_old = out.reactive_flow[k];
            const double current_sq = (p_old * p_old + q_old * q_old) / (v_send * v_send);
            out.real_flow[k] = out.real_flow[k + 1] + loads_p[k - 1] + seg.resistance * current_sq;
            out.reactive_flow[k] = out.reactive_flow[k + 1] + loads_q[k - 1] + seg.reactance * current_sq;
        }
        double change = 0.0;
        for (std::size_t k = 1; k <= n; ++k) {
            const auto& seg = spec.segments[k - 1];
            const double v_send = out.voltage[k - 1];
            const double p = out.real_flow[k];
            const double q = out.reactive_flow[k];
            const double current_sq = (p * p + q * q) / (v_send * v_send);
            const double v_sq = v_send * v_send - 2.0 * (seg.resistance * p + seg.reactance * q) +
                                (seg.resistance * seg.resistance + seg.reactance * seg.reactance) * current_sq;
            if (!(v_sq > 0.0) || !std::isfinite(v_sq))
                throw ConvergenceError("solve_nonlinear: squared voltage at bus " + std::to_string(k) +
                                       " became non-positive (line overloaded)");
            const double v = std::sqrt(v_sq);
            change = std::max(change, std::abs(v - out.voltage[k]));
            out.voltage[k] = v;
        }
        out.iterations = it;
        if (change < tol) {
            for (std::size_t k = 1; k <= n; ++k)
                out.combined_flow[k] = out.real_flow[k] + spec.alpha * out.reactive_flow[k];
            return out;
        }
    }
    throw ConvergenceError("solve_nonlinear: no convergence after " + std::to_string(max_iterations) + " sweeps");
}

/// Head-of-line drop by the backward recursion, without allocating.
/// `rhos` and `loads` are indexed by link/bus k-1.
inline double head_drop(std::span<const double> rhos, std::span<const double> loads) {
    double flow = 0.0;
    double drop = 0.0;
    for (std::size_t k = loads.size(); k >= 1; --k) {
        flow = flow + loads[k - 1];
        drop = std::max(0.0, drop + rhos[k - 1] * flow);
    }
    return drop;
}

inline DropResult max_drop(const FeederSpec& spec, std::span<const double> loads) {
    const std::size_t n = spec.bus_count();
    detail::check_length(loads.size(), n, "max_drop loads");
    DropResult out;
    out.drop.assign(n + 1, 0.0);
    std::size_t argmin = n;
    double flow = 0.0;
    for (std::size_t k = n; k >= 1; --k) {
        flow = flow + loads[k - 1];
        const double candidate = out.drop[k] + spec.segments[k - 1].rho * flow;
        if (candidate > 0.0) {
            out.drop[k - 1] = candidate;
        } else {
            out.drop[k - 1] = 0.0;
            argmin = k - 1;
        }
    }
    out.max_drop = out.drop[0];
    out.argmin_bus = argmin;
    return out;
}

}  // namespace vdrop
