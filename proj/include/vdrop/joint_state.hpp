#pragma once

// Joint law of (S, Delta) at one stage of the backward recursion, split into
// a continuous 2D density, a line density on Delta = 0, and a line density on
// the diagonal Delta = slope * S, each with optional exact point masses.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include "vdrop/grid.hpp"
#include "vdrop/mixed_density.hpp"

namespace vdrop {

struct JointAtom {
    double s = 0.0;
    double delta = 0.0;
    double mass = 0.0;
    bool operator==(const JointAtom&) const = default;
};

struct JointState {
    /// Index n of the drop Delta_n carried by this state; the state also holds
    /// the flow S_{n+1} through the link feeding bus n+1. The final state has n = 0.
    std::size_t stage = 0;
    /// rho of the link whose shear produced this state; the diagonal is Delta = slope * S.
    double slope = 0.0;

    Axis s_axis;
    Axis delta_axis;
    /// Density over (S, Delta), Delta-major: value(row, col) = continuous[row * s_axis.cells + col].
    std::vector<double> continuous;
    /// Density in S of the mass sitting on Delta = 0; supported on S <= 0.
    std::vector<double> zero_line;
    /// Density in S of the mass sitting on Delta = slope * S; supported on S > 0.
    std::vector<double> diagonal;

    std::vector<JointAtom> continuous_atoms;
    std::vector<Atom> zero_atoms;
    std::vector<Atom> diagonal_atoms;

    bool has_grid() const noexcept { return !s_axis.empty(); }

    double continuous_mass() const {
        double m = 0.0;
        for (double v : continuous) m += v;
        m *= s_axis.h * delta_axis.h;
        for (const auto& a : continuous_atoms) m += a.mass;
        return m;
    }

    double zero_line_mass() const {
        double m = 0.0;
        for (double v : zero_line) m += v;
        m *= s_axis.h;
        for (const auto& a : zero_atoms) m += a.mass;
        return m;
    }

    double diagonal_mass() const {
        double m = 0.0;
        for (double v : diagonal) m += v;
        m *= s_axis.h;
        for (const auto& a : diagonal_atoms) m += a.mass;
        return m;
    }

    double total_mass() const { return continuous_mass() + zero_line_mass() + diagonal_mass(); }

    double value(std::size_t row, std::size_t col) const { return continuous[row * s_axis.cells + col]; }

    void scale(double factor) {
        for (double& v : continuous) v *= factor;
        for (double& v : zero_line) v *= factor;
        for (double& v : diagonal) v *= factor;
        for (auto& a : continuous_atoms) a.mass *= factor;
        for (auto& a : zero_atoms) a.mass *= factor;
        for (auto& a : diagonal_atoms) a.mass *= factor;
    }
};

/// The state before any bus is processed: unit mass at S = 0, Delta = 0.
inline JointState terminal_state(std::size_t buses) {
    JointState st;
    st.stage = buses;
    st.zero_atoms.push_back({0.0, 1.0});
    return st;
}

/// Law of Delta: the zero line collapses to an atom at 0, the continuous part is
/// integrated over S, and the diagonal is mapped through Delta = slope * S.
inline DropDistribution marginal_drop(const JointState& state) {
    std::vector<Atom> atoms;
    double zero_mass = 0.0;
    for (double v : state.zero_line) zero_mass += v;
    zero_mass *= state.s_axis.h;
    for (const auto& a : state.zero_atoms) zero_mass += a.mass;
    if (zero_mass > 0.0) atoms.push_back({0.0, zero_mass});
    for (const auto& a : state.diagonal_atoms) atoms.push_back({state.slope * a.location, a.mass});
    for (const auto& a : state.continuous_atoms) atoms.push_back({a.delta, a.mass});

    std::optional<Grid1D> grid;
    if (state.has_grid()) {
        Axis ax = state.delta_axis;
        const double diag_top = state.slope * state.s_axis.hi();
        if (diag_top > ax.hi())
            ax.cells = static_cast<std::size_t>(std::ceil((diag_top - ax.lo) / ax.h - 1e-9));
        std::vector<double> masses(ax.cells, 0.0);
        const std::size_t ns = state.s_axis.cells;
        const double cell_area = state.s_axis.h * state.delta_axis.h;
        for (std::size_t r = 0; r < state.delta_axis.cells; ++r) {
            double row = 0.0;
            for (std::size_t c = 0; c < ns; ++c) row += state.continuous[r * ns + c];
            masses[r] += row * cell_area;
        }
        double lost = 0.0;
        for (std::size_t c = 0; c < ns; ++c) {
            const double m = state.diagonal[c] * state.s_axis.h;
            if (m == 0.0) continue;
            lost += deposit_interval(state.slope * state.s_axis.edge(c), state.slope * state.s_axis.edge(c + 1), m,
                                     ax, masses);
        }
        // whatever overshoots by round-off stays in the top cell
        masses.back() += lost;
        for (double& m : masses) m /= ax.h;
        grid = Grid1D(ax, std::move(masses));
    }
    return DropDistribution(MixedDensity1D(std::move(grid), std::move(atoms)));
}

/// Long-form `part,s,delta,value`: the continuous grid (density), both line
/// densities, then one row per atom with its mass.
inline void joint_to_csv(std::ostream& os, const JointState& state) {
    os.precision(17);
    os << "part,s,delta,value\n";
    if (state.has_grid()) {
        const std::size_t ns = state.s_axis.cells;
        for (std::size_t r = 0; r < state.delta_axis.cells; ++r)
            for (std::size_t c = 0; c < ns; ++c)
                os << "continuous," << state.s_axis.center(c) << ',' << state.delta_axis.center(r) << ','
                   << state.continuous[r * ns + c] << '\n';
        for (std::size_t c = 0; c < ns; ++c)
            os << "zero_line," << state.s_axis.center(c) << ",0," << state.zero_line[c] << '\n';
        for (std::size_t c = 0; c < ns; ++c)
            os << "diagonal," << state.s_axis.center(c) << ',' << state.slope * state.s_axis.center(c) << ','
               << state.diagonal[c] << '\n';
    }
    for (const auto& a : state.continuous_atoms)
        os << "continuous_atom," << a.s << ',' << a.delta << ',' << a.mass << '\n';
    for (const auto& a : state.zero_atoms) os << "zero_atom," << a.location << ",0," << a.mass << '\n';
    for (const auto& a : state.diagonal_atoms)
        os << "diagonal_atom," << a.location << ',' << state.slope * a.location << ',' << a.mass << '\n';
}

}  // namespace vdrop
