#pragma once

// Radial feeder description and its JSON configuration format.
//
//   {
//     "_comment": "r, x in p.u.; loads in kW",
//     "base_voltage": 1.0,
//     "alpha": 0.0,
//     "segments": [ {"r": 0.001, "x": 0.0}, ... ],
//     "loads": [ {"family": "two_sided_exponential", "weight": 0.25,
//                 "scale_pos": 3.0, "rate_neg": 1.0}, ... ]
//   }
//
// Segment k (1-based) joins bus k-1 to bus k; load k sits on bus k. Keys that
// start with an underscore are ignored.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdrop/errors.hpp"
#include "vdrop/load_density.hpp"

namespace vdrop {

using json = nlohmann::json;

struct LineSegment {
    double resistance = 0.0;
    double reactance = 0.0;
    /// Voltage sensitivity r/V0 in p.u. per kW.
    double rho = 0.0;

    bool operator==(const LineSegment&) const = default;
};

struct FeederSpec {
    double base_voltage = 1.0;
    double alpha = 0.0;
    std::vector<LineSegment> segments;
    std::vector<LoadDensity> loads;

    std::size_t bus_count() const noexcept { return segments.size(); }

    std::vector<double> rhos() const {
        std::vector<double> out;
        out.reserve(segments.size());
        for (const auto& seg : segments) out.push_back(seg.rho);
        return out;
    }

    bool operator==(const FeederSpec&) const = default;
};

inline LineSegment make_segment(double r, double x, double base_voltage) {
    return LineSegment{r, x, r / base_voltage};
}

/// Throws ConfigError naming the offending field when an invariant fails.
inline void validate(const FeederSpec& spec) {
    if (!(spec.base_voltage > 0.0) || !std::isfinite(spec.base_voltage))
        throw ConfigError("base_voltage", "must be positive");
    if (!std::isfinite(spec.alpha) || spec.alpha < 0.0) throw ConfigError("alpha", "must be finite and >= 0");
    if (spec.segments.empty()) throw ConfigError("segments", "feeder needs at least one segment");
    if (spec.segments.size() != spec.loads.size())
        throw ConfigError("loads", "count mismatch: " + std::to_string(spec.segments.size()) + " segments but " +
                                       std::to_string(spec.loads.size()) + " loads");
    for (std::size_t k = 0; k < spec.segments.size(); ++k) {
        const auto& seg = spec.segments[k];
        const std::string path = "segments[" + std::to_string(k) + "]";
        if (!(seg.resistance > 0.0) || !std::isfinite(seg.resistance))
            throw ConfigError(path + ".r", "must be positive");
        if (!(seg.reactance >= 0.0) || !std::isfinite(seg.reactance))
            throw ConfigError(path + ".x", "must be >= 0");
        const double expected_x = spec.alpha * seg.resistance;
        if (std::abs(seg.reactance - expected_x) > 1e-9 * std::max(1.0, std::abs(expected_x)))
            throw ConfigError(path + ".x", "x/r must equal alpha for a homogeneous feeder");
        if (!(seg.rho > 0.0)) throw ConfigError(path + ".r", "derived rho must be positive");
    }
}

namespace detail {

inline double require_number(const json& obj, const std::string& key, const std::string& path) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError(path + "." + key, "missing");
    if (!it->is_number()) throw ConfigError(path + "." + key, "expected a number");
    return it->get<double>();
}

inline std::vector<double> require_array(const json& obj, const std::string& key, const std::string& path) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError(path + "." + key, "missing");
    if (!it->is_array()) throw ConfigError(path + "." + key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& v : *it) {
        if (!v.is_number()) throw ConfigError(path + "." + key, "expected an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

inline void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (!key.empty() && key.front() == '_') continue;
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
    }
}

}  // namespace detail

inline LoadDensity load_density_from_json(const json& obj, const std::string& path) {
    if (!obj.is_object()) throw ConfigError(path, "expected an object");
    const auto fam = obj.find("family");
    if (fam == obj.end() || !fam->is_string()) throw ConfigError(path + ".family", "missing family tag");
    const std::string family = fam->get<std::string>();
    try {
        if (family == "two_sided_exponential") {
            detail::reject_unknown_keys(obj, {"family", "weight", "scale_pos", "rate_neg"}, path);
            const double scale_pos = detail::require_number(obj, "scale_pos", path);
            const double rate_neg = detail::require_number(obj, "rate_neg", path);
            if (obj.contains("weight"))
                return LoadDensity::two_sided_exponential(detail::require_number(obj, "weight", path), scale_pos,
                                                          rate_neg);
            return LoadDensity::two_sided_exponential(scale_pos, rate_neg);
        }
        if (family == "point_mass") {
            detail::reject_unknown_keys(obj, {"family", "location"}, path);
            return LoadDensity::point_mass(detail::require_number(obj, "location", path));
        }
        if (family == "uniform") {
            detail::reject_unknown_keys(obj, {"family", "lower", "upper"}, path);
            return LoadDensity::uniform(detail::require_number(obj, "lower", path),
                                        detail::require_number(obj, "upper", path));
        }
        if (family == "gaussian") {
            detail::reject_unknown_keys(obj, {"family", "mean", "stddev"}, path);
            return LoadDensity::gaussian(detail::require_number(obj, "mean", path),
                                         detail::require_number(obj, "stddev", path));
        }
        if (family == "histogram") {
            detail::reject_unknown_keys(obj, {"family", "edges", "masses"}, path);
            return LoadDensity::histogram(detail::require_array(obj, "edges", path),
                                          detail::require_array(obj, "masses", path));
        }
        if (family == "exponential") {
            detail::reject_unknown_keys(obj, {"family", "shift", "scale"}, path);
            return LoadDensity::exponential(detail::require_number(obj, "shift", path),
                                            detail::require_number(obj, "scale", path));
        }
    } catch (const ConfigError& e) {
        // family constructors report bare field names
        if (e.field().rfind(path, 0) == 0) throw;
        throw ConfigError(path + "." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
    }
    throw ConfigError(path + ".family", "unknown family '" + family + "'");
}

inline json load_density_to_json(const LoadDensity& d) {
    return std::visit(
        [](const auto& f) -> json {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, TwoSidedExponential>)
                return {{"family", "two_sided_exponential"},
                        {"weight", f.weight},
                        {"scale_pos", f.scale_pos},
                        {"rate_neg", f.rate_neg}};
            else if constexpr (std::is_same_v<T, PointMass>)
                return {{"family", "point_mass"}, {"location", f.location}};
            else if constexpr (std::is_same_v<T, Uniform>)
                return {{"family", "uniform"}, {"lower", f.lower}, {"upper", f.upper}};
            else if constexpr (std::is_same_v<T, Gaussian>)
                return {{"family", "gaussian"}, {"mean", f.mean}, {"stddev", f.stddev}};
            else if constexpr (std::is_same_v<T, Histogram>)
                return {{"family", "histogram"}, {"edges", f.edges}, {"masses", f.masses}};
            else
                return {{"family", "exponential"}, {"shift", f.shift}, {"scale", f.scale}};
        },
        d.family());
}

inline FeederSpec feeder_from_json(const json& root) {
    if (!root.is_object()) throw ConfigError("", "top level must be a JSON object");
    detail::reject_unknown_keys(root, {"base_voltage", "alpha", "segments", "loads"}, "");
    FeederSpec spec;
    spec.base_voltage = root.contains("base_voltage") ? detail::require_number(root, "base_voltage", "") : 1.0;
    spec.alpha = root.contains("alpha") ? detail::require_number(root, "alpha", "") : 0.0;
    if (!(spec.base_voltage > 0.0)) throw ConfigError("base_voltage", "must be positive");

    const auto segs = root.find("segments");
    if (segs == root.end() || !segs->is_array()) throw ConfigError("segments", "missing or not an array");
    for (std::size_t k = 0; k < segs->size(); ++k) {
        const auto& s = (*segs)[k];
        const std::string path = "segments[" + std::to_string(k) + "]";
        if (!s.is_object()) throw ConfigError(path, "expected an object");
        detail::reject_unknown_keys(s, {"r", "x"}, path);
        const double r = detail::require_number(s, "r", path);
        const double x = s.contains("x") ? detail::require_number(s, "x", path) : spec.alpha * r;
        spec.segments.push_back(make_segment(r, x, spec.base_voltage));
    }

    const auto loads = root.find("loads");
    if (loads == root.end() || !loads->is_array()) throw ConfigError("loads", "missing or not an array");
    for (std::size_t k = 0; k < loads->size(); ++k)
        spec.loads.push_back(load_density_from_json((*loads)[k], "loads[" + std::to_string(k) + "]"));

    validate(spec);
    return spec;
}

inline json feeder_to_json(const FeederSpec& spec) {
    json segs = json::array();
    for (const auto& seg : spec.segments) segs.push_back({{"r", seg.resistance}, {"x", seg.reactance}});
    json loads = json::array();
    for (const auto& d : spec.loads) loads.push_back(load_density_to_json(d));
    return {{"_comment", "r, x in p.u.; loads in kW"},
            {"base_voltage", spec.base_voltage},
            {"alpha", spec.alpha},
            {"segments", std::move(segs)},
            {"loads", std::move(loads)}};
}

inline FeederSpec parse_feeder_string(const std::string& text) {
    json root;
    try {
        root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("malformed JSON: ") + e.what());
    }
    return feeder_from_json(root);
}

inline FeederSpec parse_feeder(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_feeder_string(buf.str());
}

/// Homogeneous feeder with identical segments and loads.
inline FeederSpec uniform_feeder(std::size_t buses, double rho, const LoadDensity& load, double base_voltage = 1.0,
                                 double alpha = 0.0) {
    FeederSpec spec;
    spec.base_voltage = base_voltage;
    spec.alpha = alpha;
    const double r = rho * base_voltage;
    for (std::size_t k = 0; k < buses; ++k) {
        spec.segments.push_back(make_segment(r, alpha * r, base_voltage));
        spec.loads.push_back(load);
    }
    validate(spec);
    return spec;
}

}  // namespace vdrop
