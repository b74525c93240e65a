#pragma once

// Per-bus load laws on the combined variable s = p + alpha*q (kW).
// Positive s is consumption, negative s is injection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "vdrop/errors.hpp"

namespace vdrop {

inline constexpr double kNormalizationTolerance = 1e-9;

/// weight*exp(-s/scale_pos) for s > 0 and weight*exp(rate_neg*s) for s <= 0.
struct TwoSidedExponential {
    double weight = 0.0;
    double scale_pos = 0.0;
    double rate_neg = 0.0;
    bool operator==(const TwoSidedExponential&) const = default;
};

struct PointMass {
    double location = 0.0;
    bool operator==(const PointMass&) const = default;
};

struct Uniform {
    double lower = 0.0;
    double upper = 0.0;
    bool operator==(const Uniform&) const = default;
};

struct Gaussian {
    double mean = 0.0;
    double stddev = 0.0;
    bool operator==(const Gaussian&) const = default;
};

/// Piecewise-uniform density: `masses[i]` spread over [edges[i], edges[i+1]).
struct Histogram {
    std::vector<double> edges;
    std::vector<double> masses;
    bool operator==(const Histogram&) const = default;
};

/// One-sided exponential supported on [shift, inf).
struct Exponential {
    double shift = 0.0;
    double scale = 0.0;
    bool operator==(const Exponential&) const = default;
};

struct LoadMoments {
    double mean = 0.0;
    double stddev = 0.0;
};

class LoadDensity {
  public:
    using Family = std::variant<TwoSidedExponential, PointMass, Uniform, Gaussian, Histogram, Exponential>;

    /// Defaults to a point mass at zero (no load).
    LoadDensity() : family_(PointMass{0.0}) {}

    static LoadDensity two_sided_exponential(double weight, double scale_pos, double rate_neg) {
        if (!(scale_pos > 0.0) || !std::isfinite(scale_pos))
            throw ConfigError("scale_pos", "must be positive and finite");
        if (!(rate_neg > 0.0) || !std::isfinite(rate_neg))
            throw ConfigError("rate_neg", "must be positive and finite");
        if (!(weight > 0.0))
            throw ConfigError("weight", "must be positive");
        const double total = weight * (scale_pos + 1.0 / rate_neg);
        if (std::abs(total - 1.0) > kNormalizationTolerance)
            throw ConfigError("weight", "weight*(scale_pos + 1/rate_neg) = " + std::to_string(total) +
                                            ", expected 1");
        return LoadDensity(TwoSidedExponential{weight, scale_pos, rate_neg});
    }

    /// Weight derived from the normalization condition.
    static LoadDensity two_sided_exponential(double scale_pos, double rate_neg) {
        if (!(rate_neg > 0.0)) throw ConfigError("rate_neg", "must be positive and finite");
        return two_sided_exponential(1.0 / (scale_pos + 1.0 / rate_neg), scale_pos, rate_neg);
    }

    static LoadDensity point_mass(double location) {
        if (!std::isfinite(location)) throw ConfigError("location", "must be finite");
        return LoadDensity(PointMass{location});
    }

    static LoadDensity uniform(double lower, double upper) {
        if (!std::isfinite(lower) || !std::isfinite(upper) || !(upper > lower))
            throw ConfigError("upper", "uniform bounds must be finite with upper > lower");
        return LoadDensity(Uniform{lower, upper});
    }

    static LoadDensity gaussian(double mean, double stddev) {
        if (!std::isfinite(mean)) throw ConfigError("mean", "must be finite");
        if (!(stddev > 0.0) || !std::isfinite(stddev)) throw ConfigError("stddev", "must be positive and finite");
        return LoadDensity(Gaussian{mean, stddev});
    }

    static LoadDensity histogram(std::vector<double> edges, std::vector<double> masses) {
        if (edges.size() < 2) throw ConfigError("edges", "need at least two bin edges");
        if (masses.size() + 1 != edges.size())
            throw ConfigError("masses", "expected " + std::to_string(edges.size() - 1) + " masses, got " +
                                            std::to_string(masses.size()));
        for (std::size_t i = 0; i < edges.size(); ++i) {
            if (!std::isfinite(edges[i])) throw ConfigError("edges", "must be finite");
            if (i > 0 && !(edges[i] > edges[i - 1])) throw ConfigError("edges", "must be strictly increasing");
        }
        for (double m : masses)
            if (!(m >= 0.0) || !std::isfinite(m)) throw ConfigError("masses", "must be nonnegative");
        const double total = std::accumulate(masses.begin(), masses.end(), 0.0);
        if (std::abs(total - 1.0) > kNormalizationTolerance)
            throw ConfigError("masses", "sum to " + std::to_string(total) + ", expected 1");
        return LoadDensity(Histogram{std::move(edges), std::move(masses)});
    }

    static LoadDensity exponential(double shift, double scale) {
        if (!std::isfinite(shift)) throw ConfigError("shift", "must be finite");
        if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("scale", "must be positive and finite");
        return LoadDensity(Exponential{shift, scale});
    }

    const Family& family() const noexcept { return family_; }

    std::string_view family_name() const {
        return std::visit(
            [](const auto& f) -> std::string_view {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TwoSidedExponential>) return "two_sided_exponential";
                else if constexpr (std::is_same_v<T, PointMass>) return "point_mass";
                else if constexpr (std::is_same_v<T, Uniform>) return "uniform";
                else if constexpr (std::is_same_v<T, Gaussian>) return "gaussian";
                else if constexpr (std::is_same_v<T, Histogram>) return "histogram";
                else return "exponential";
            },
            family_);
    }

    bool is_point_mass() const noexcept { return std::holds_alternative<PointMass>(family_); }

    double atom_location() const { return std::get<PointMass>(family_).location; }

    /// Closed support hull; infinite ends for unbounded families.
    std::pair<double, double> support() const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        return std::visit(
            [&](const auto& f) -> std::pair<double, double> {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TwoSidedExponential>) return {-inf, inf};
                else if constexpr (std::is_same_v<T, PointMass>) return {f.location, f.location};
                else if constexpr (std::is_same_v<T, Uniform>) return {f.lower, f.upper};
                else if constexpr (std::is_same_v<T, Gaussian>) return {-inf, inf};
                else if constexpr (std::is_same_v<T, Histogram>) return {f.edges.front(), f.edges.back()};
                else return {f.shift, inf};
            },
            family_);
    }

    /// Density value; zero everywhere for the point mass (it has no density).
    double pdf(double s) const {
        return std::visit(
            [&](const auto& f) -> double {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TwoSidedExponential>) {
                    return s > 0.0 ? f.weight * std::exp(-s / f.scale_pos) : f.weight * std::exp(f.rate_neg * s);
                } else if constexpr (std::is_same_v<T, PointMass>) {
                    return 0.0;
                } else if constexpr (std::is_same_v<T, Uniform>) {
                    return (s >= f.lower && s <= f.upper) ? 1.0 / (f.upper - f.lower) : 0.0;
                } else if constexpr (std::is_same_v<T, Gaussian>) {
                    const double z = (s - f.mean) / f.stddev;
                    return std::exp(-0.5 * z * z) / (f.stddev * std::sqrt(2.0 * M_PI));
                } else if constexpr (std::is_same_v<T, Histogram>) {
                    if (s < f.edges.front() || s >= f.edges.back()) return 0.0;
                    const auto it = std::upper_bound(f.edges.begin(), f.edges.end(), s);
                    const std::size_t bin = static_cast<std::size_t>(it - f.edges.begin()) - 1;
                    return f.masses[bin] / (f.edges[bin + 1] - f.edges[bin]);
                } else {
                    return s >= f.shift ? std::exp(-(s - f.shift) / f.scale) / f.scale : 0.0;
                }
            },
            family_);
    }

    /// P(load <= s), right-continuous.
    double cdf(double s) const {
        return std::visit(
            [&](const auto& f) -> double {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TwoSidedExponential>) {
                    const double at_zero = f.weight / f.rate_neg;
                    if (s <= 0.0) return at_zero * std::exp(f.rate_neg * s);
                    return at_zero - f.weight * f.scale_pos * std::expm1(-s / f.scale_pos);
                } else if constexpr (std::is_same_v<T, PointMass>) {
                    return s >= f.location ? 1.0 : 0.0;
                } else if constexpr (std::is_same_v<T, Uniform>) {
                    return std::clamp((s - f.lower) / (f.upper - f.lower), 0.0, 1.0);
                } else if constexpr (std::is_same_v<T, Gaussian>) {
                    return 0.5 * std::erfc(-(s - f.mean) / (f.stddev * std::sqrt(2.0)));
                } else if constexpr (std::is_same_v<T, Histogram>) {
                    if (s < f.edges.front()) return 0.0;
                    if (s >= f.edges.back()) return 1.0;
                    double acc = 0.0;
                    for (std::size_t i = 0; i + 1 < f.edges.size(); ++i) {
                        if (s >= f.edges[i + 1]) {
                            acc += f.masses[i];
                        } else {
                            acc += f.masses[i] * (s - f.edges[i]) / (f.edges[i + 1] - f.edges[i]);
                            break;
                        }
                    }
                    return std::min(acc, 1.0);
                } else {
                    return s <= f.shift ? 0.0 : -std::expm1(-(s - f.shift) / f.scale);
                }
            },
            family_);
    }

    /// Generalized inverse inf{s : cdf(s) >= p}; p must lie in [0, 1].
    double quantile(double p) const {
        if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("quantile: probability outside [0, 1]");
        const auto [lo, hi] = support();
        if (p == 0.0) return lo;
        if (p == 1.0) return hi;
        return std::visit(
            [&](const auto& f) -> double {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TwoSidedExponential>) {
                    const double at_zero = f.weight / f.rate_neg;
                    if (p <= at_zero) return std::log(p / at_zero) / f.rate_neg;
                    return -f.scale_pos * std::log1p(-(p - at_zero) / (f.weight * f.scale_pos));
                } else if constexpr (std::is_same_v<T, PointMass>) {
                    return f.location;
                } else if constexpr (std::is_same_v<T, Uniform>) {
                    return f.lower + p * (f.upper - f.lower);
                } else if constexpr (std::is_same_v<T, Gaussian>) {
                    return boost::math::quantile(boost::math::normal_distribution<double>(f.mean, f.stddev), p);
                } else if constexpr (std::is_same_v<T, Histogram>) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < f.masses.size(); ++i) {
                        if (f.masses[i] > 0.0 && acc + f.masses[i] >= p) {
                            const double frac = std::clamp((p - acc) / f.masses[i], 0.0, 1.0);
                            return f.edges[i] + frac * (f.edges[i + 1] - f.edges[i]);
                        }
                        acc += f.masses[i];
                    }
                    return f.edges.back();
                } else {
                    return f.shift - f.scale * std::log1p(-p);
                }
            },
            family_);
    }

    /// Law of factor*s for factor >= 0; factor 0 collapses to a point mass at zero.
    LoadDensity scaled(double factor) const {
        if (!(factor >= 0.0) || !std::isfinite(factor)) throw ConfigError("factor", "must be finite and >= 0");
        if (factor == 0.0) return point_mass(0.0);
        return std::visit(
            [&](const auto& f) -> LoadDensity {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TwoSidedExponential>) {
                    return LoadDensity(TwoSidedExponential{f.weight / factor, f.scale_pos * factor, f.rate_neg / factor});
                } else if constexpr (std::is_same_v<T, PointMass>) {
                    return LoadDensity(PointMass{f.location * factor});
                } else if constexpr (std::is_same_v<T, Uniform>) {
                    return LoadDensity(Uniform{f.lower * factor, f.upper * factor});
                } else if constexpr (std::is_same_v<T, Gaussian>) {
                    return LoadDensity(Gaussian{f.mean * factor, f.stddev * factor});
                } else if constexpr (std::is_same_v<T, Histogram>) {
                    Histogram h = f;
                    for (double& e : h.edges) e *= factor;
                    return LoadDensity(std::move(h));
                } else {
                    return LoadDensity(Exponential{f.shift * factor, f.scale * factor});
                }
            },
            family_);
    }

    /// Returns a density of the same family whose injection probability P(s <= 0)
    /// is `factor` times the current one. The positive-side shape is kept where the
    /// family allows it: the two-sided exponential adjusts its negative rate,
    /// gaussian and uniform laws are translated.
    LoadDensity with_injection_probability_scaled(double factor) const {
        const double target = factor * cdf(0.0);
        if (!(target > 0.0 && target < 1.0))
            throw ConfigError("injection_probability", "scaled injection probability " + std::to_string(target) +
                                                           " must lie strictly inside (0, 1)");
        return std::visit(
            [&](const auto& f) -> LoadDensity {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, TwoSidedExponential>) {
                    // P(s <= 0) = 1 / (1 + scale_pos * rate_neg)
                    const double rate = (1.0 / target - 1.0) / f.scale_pos;
                    return two_sided_exponential(f.scale_pos, rate);
                } else if constexpr (std::is_same_v<T, Gaussian>) {
                    const double z = boost::math::quantile(boost::math::normal_distribution<double>(), target);
                    return gaussian(-z * f.stddev, f.stddev);
                } else if constexpr (std::is_same_v<T, Uniform>) {
                    const double width = f.upper - f.lower;
                    return uniform(-target * width, (1.0 - target) * width);
                } else {
                    throw ConfigError("family", "injection-probability scaling is not defined for family " +
                                                    std::string(family_name()));
                }
            },
            family_);
    }

    bool operator==(const LoadDensity&) const = default;

  private:
    explicit LoadDensity(Family f) : family_(std::move(f)) {}

    Family family_;
};

/// Exact moments for closed families, exact piecewise-uniform moments for histograms.
inline LoadMoments load_moments(const LoadDensity& d) {
    return std::visit(
        [](const auto& f) -> LoadMoments {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, TwoSidedExponential>) {
                const double lp = f.scale_pos;
                const double ln = 1.0 / f.rate_neg;
                const double mean = f.weight * (lp * lp - ln * ln);
                const double second = f.weight * 2.0 * (lp * lp * lp + ln * ln * ln);
                return {mean, std::sqrt(std::max(second - mean * mean, 0.0))};
            } else if constexpr (std::is_same_v<T, PointMass>) {
                return {f.location, 0.0};
            } else if constexpr (std::is_same_v<T, Uniform>) {
                return {0.5 * (f.lower + f.upper), (f.upper - f.lower) / std::sqrt(12.0)};
            } else if constexpr (std::is_same_v<T, Gaussian>) {
                return {f.mean, f.stddev};
            } else if constexpr (std::is_same_v<T, Histogram>) {
                double mean = 0.0;
                double second = 0.0;
                for (std::size_t i = 0; i < f.masses.size(); ++i) {
                    const double a = f.edges[i];
                    const double b = f.edges[i + 1];
                    mean += f.masses[i] * 0.5 * (a + b);
                    second += f.masses[i] * (a * a + a * b + b * b) / 3.0;
                }
                return {mean, std::sqrt(std::max(second - mean * mean, 0.0))};
            } else {
                return {f.shift + f.scale, f.scale};
            }
        },
        d.family());
}

}  // namespace vdrop
