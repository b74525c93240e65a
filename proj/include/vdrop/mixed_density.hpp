#pragma once

// One-dimensional laws made of a gridded continuous part plus point masses.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vdrop/grid.hpp"
#include "vdrop/load_density.hpp"

namespace vdrop {

inline constexpr double kMassSlack = 1e-6;

struct Atom {
    double location = 0.0;
    double mass = 0.0;
    bool operator==(const Atom&) const = default;
};

class MixedDensity1D {
  public:
    MixedDensity1D() = default;

    explicit MixedDensity1D(std::optional<Grid1D> continuous, std::vector<Atom> atoms = {})
        : continuous_(std::move(continuous)) {
        for (const auto& a : atoms) add_atom(a);
        if (total_mass() > 1.0 + kMassSlack) throw std::invalid_argument("MixedDensity1D: total mass exceeds one");
    }

    const std::optional<Grid1D>& continuous() const noexcept { return continuous_; }
    const std::vector<Atom>& atoms() const noexcept { return atoms_; }

    double continuous_mass() const { return continuous_ ? continuous_->mass() : 0.0; }

    double atom_mass() const {
        double m = 0.0;
        for (const auto& a : atoms_) m += a.mass;
        return m;
    }

    double total_mass() const { return continuous_mass() + atom_mass(); }

    /// Atoms closer than half a grid cell (or 1e-12 relative without a grid) merge.
    void add_atom(Atom a) {
        if (!(a.mass >= 0.0) || !std::isfinite(a.location)) throw std::invalid_argument("add_atom: invalid atom");
        if (a.mass == 0.0) return;
        const double tol = continuous_ ? 0.5 * continuous_->axis.h
                                       : 1e-12 * std::max(1.0, std::abs(a.location));
        for (auto& existing : atoms_) {
            if (std::abs(existing.location - a.location) <= tol) {
                existing.mass += a.mass;
                return;
            }
        }
        atoms_.push_back(a);
        std::sort(atoms_.begin(), atoms_.end(), [](const Atom& x, const Atom& y) { return x.location < y.location; });
    }

  private:
    std::optional<Grid1D> continuous_;
    std::vector<Atom> atoms_;
};

struct GriddedLoad {
    MixedDensity1D density;
    /// Probability mass of the load law lying outside the grid domain.
    double tail_mass = 0.0;
};

/// Discretizes a load law on [lo, hi] with `cells` cells. Each cell holds the
/// exact cell average (CDF difference over the width), so in-domain mass is
/// preserved and the mass outside the domain is reported as `tail_mass`.
inline GriddedLoad density_to_grid(const LoadDensity& d, double lo, double hi, std::size_t cells,
                                   double truncation_tolerance = 1e-5) {
    if (d.is_point_mass()) return {MixedDensity1D(std::nullopt, {Atom{d.atom_location(), 1.0}}), 0.0};
    if (cells < 2) throw std::invalid_argument("density_to_grid: need at least two cells");
    const Axis axis = Axis::over(lo, hi, cells);
    std::vector<double> values(cells);
    double prev = d.cdf(lo);
    const double below = prev;
    for (std::size_t i = 0; i < cells; ++i) {
        const double next = d.cdf(axis.edge(i + 1));
        values[i] = std::max(0.0, next - prev) / axis.h;
        prev = next;
    }
    const double tail = below + (1.0 - prev);
    if (tail > truncation_tolerance)
        throw std::domain_error("density_to_grid: domain [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                "] leaves tail mass " + std::to_string(tail));
    return {MixedDensity1D(Grid1D(axis, std::move(values))), tail};
}

/// Law of the maximal voltage drop: point masses (including the one at zero)
/// plus a piecewise-constant density on a nonnegative axis.
class DropDistribution {
  public:
    DropDistribution() = default;

    explicit DropDistribution(MixedDensity1D law) : law_(std::move(law)) { build_knots(); }

    const MixedDensity1D& law() const noexcept { return law_; }

    double total_mass() const { return law_.total_mass(); }

    /// Mass of the atom sitting exactly at zero drop.
    double atom_at_zero() const {
        for (const auto& a : law_.atoms())
            if (a.location == 0.0) return a.mass;
        return 0.0;
    }

    /// P(drop <= x), right-continuous.
    double cdf(double x) const { return evaluate(x, true); }

    /// P(drop < x).
    double cdf_left(double x) const { return evaluate(x, false); }

    double prob_exceed(double x) const { return 1.0 - cdf(x); }

    /// Generalized inverse inf{x : cdf(x) >= p}.
    double quantile(double p) const {
        if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("quantile: probability outside [0, 1]");
        if (knots_.empty()) return 0.0;
        if (p <= knots_.front().right) return knots_.front().x;
        for (std::size_t i = 1; i < knots_.size(); ++i) {
            const Knot& prev = knots_[i - 1];
            const Knot& cur = knots_[i];
            if (cur.left >= p) {
                // crossing inside the linear piece (prev.x, cur.x)
                const double rise = cur.left - prev.right;
                double x = rise > 0.0 ? prev.x + (cur.x - prev.x) * (p - prev.right) / rise : cur.x;
                x = std::clamp(x, prev.x, cur.x);
                while (x < cur.x && cdf(x) < p) x = std::nextafter(x, cur.x);
                return x;
            }
            if (cur.right >= p) return cur.x;
        }
        return knots_.back().x;
    }

    struct MeanStd {
        double mean = 0.0;
        double stddev = 0.0;
    };

    /// Moments of the normalized law (continuous cells contribute their exact
    /// piecewise-uniform moments).
    MeanStd mean_std() const {
        double mass = 0.0;
        double first = 0.0;
        double second = 0.0;
        for (const auto& a : law_.atoms()) {
            mass += a.mass;
            first += a.mass * a.location;
            second += a.mass * a.location * a.location;
        }
        if (const auto& g = law_.continuous()) {
            const double h = g->axis.h;
            for (std::size_t i = 0; i < g->axis.cells; ++i) {
                const double m = g->density[i] * h;
                const double c = g->axis.center(i);
                mass += m;
                first += m * c;
                second += m * (c * c + h * h / 12.0);
            }
        }
        if (mass <= 0.0) return {};
        const double mean = first / mass;
        return {mean, std::sqrt(std::max(0.0, second / mass - mean * mean))};
    }

    double lower_support() const { return knots_.empty() ? 0.0 : knots_.front().x; }
    double upper_support() const { return knots_.empty() ? 0.0 : knots_.back().x; }

  private:
    // Sorted breakpoints: cell edges and atom locations. Between consecutive
    // knots the CDF is linear.
    struct Knot {
        double x = 0.0;
        double left = 0.0;
        double right = 0.0;
    };

    void build_knots() {
        std::vector<double> xs;
        for (const auto& a : law_.atoms()) xs.push_back(a.location);
        if (const auto& g = law_.continuous())
            for (std::size_t i = 0; i <= g->axis.cells; ++i) xs.push_back(g->axis.edge(i));
        std::sort(xs.begin(), xs.end());
        xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
        cont_prefix_.clear();
        if (const auto& g = law_.continuous()) {
            cont_prefix_.resize(g->axis.cells + 1, 0.0);
            for (std::size_t i = 0; i < g->axis.cells; ++i)
                cont_prefix_[i + 1] = cont_prefix_[i] + g->density[i] * g->axis.h;
        }
        knots_.clear();
        knots_.reserve(xs.size());
        for (double x : xs) knots_.push_back({x, evaluate(x, false), evaluate(x, true)});
    }

    double continuous_cdf(double x) const {
        const auto& g = law_.continuous();
        if (!g || cont_prefix_.empty()) return 0.0;
        if (x <= g->axis.lo) return 0.0;
        if (x >= g->axis.hi()) return cont_prefix_.back();
        const double t = (x - g->axis.lo) / g->axis.h;
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), g->axis.cells - 1);
        const double frac = std::clamp(t - static_cast<double>(i), 0.0, 1.0);
        return cont_prefix_[i] + frac * g->density[i] * g->axis.h;
    }

    double atoms_below(double x, bool inclusive) const {
        double m = 0.0;
        for (const auto& a : law_.atoms())
            if (a.location < x || (inclusive && a.location == x)) m += a.mass;
        return m;
    }

    double evaluate(double x, bool inclusive) const {
        return continuous_cdf(x) + atoms_below(x, inclusive);
    }

    MixedDensity1D law_;
    std::vector<Knot> knots_;
    std::vector<double> cont_prefix_;
};

/// Writes `x,density,atom_mass`: one row per cell centre, then one per atom.
inline void write_density_csv(std::ostream& os, const MixedDensity1D& d) {
    os.precision(17);
    os << "x,density,atom_mass\n";
    if (const auto& g = d.continuous())
        for (std::size_t i = 0; i < g->axis.cells; ++i) os << g->axis.center(i) << ',' << g->density[i] << ",0\n";
    for (const auto& a : d.atoms()) os << a.location << ",0," << a.mass << '\n';
}

}  // namespace vdrop
