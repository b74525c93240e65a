#pragma once

// Brute-force reference: sample independent loads, replay the max-drop
// recursion per sample and collect the empirical law of the head drop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vdrop/distflow.hpp"
#include "vdrop/feeder.hpp"
#include "vdrop/load_density.hpp"
#include "vdrop/mixed_density.hpp"

namespace vdrop {

struct McConfig {
    std::size_t samples = 100000;
    std::uint64_t seed = 1;
    std::size_t shards = 1;
    /// Number of leading samples whose (S0, Delta0) pair is kept for scatter plots.
    std::size_t retain_joint = 10000;
    /// Replay each sample through the full quadratic sweep (p = s, q = 0)
    /// instead of the linear recursion.
    bool nonlinear = false;
};

struct EmpiricalDrop {
    std::vector<double> sorted_drop;
    std::size_t zero_count = 0;
    /// (S0, Delta0) for samples 0..retain_joint-1, in sample order.
    std::vector<std::pair<double, double>> joint;

    std::size_t size() const noexcept { return sorted_drop.size(); }

    double cdf(double x) const {
        if (sorted_drop.empty()) return 0.0;
        const auto it = std::upper_bound(sorted_drop.begin(), sorted_drop.end(), x);
        return static_cast<double>(it - sorted_drop.begin()) / static_cast<double>(sorted_drop.size());
    }

    double zero_frequency() const {
        return sorted_drop.empty() ? 0.0 : static_cast<double>(zero_count) / static_cast<double>(sorted_drop.size());
    }

    double mean() const {
        double acc = 0.0;
        for (double v : sorted_drop) acc += v;
        return sorted_drop.empty() ? 0.0 : acc / static_cast<double>(sorted_drop.size());
    }

    double stddev() const {
        if (sorted_drop.size() < 2) return 0.0;
        const double m = mean();
        double acc = 0.0;
        for (double v : sorted_drop) acc += (v - m) * (v - m);
        return std::sqrt(acc / static_cast<double>(sorted_drop.size() - 1));
    }

    double prob_exceed(double x) const { return 1.0 - cdf(x); }

    bool operator==(const EmpiricalDrop&) const = default;
};

/// SplitMix64 (Steele, Lea & Flood); used as a per-sample stream so that the
/// stream for sample i depends only on (seed, i).
class SplitMix64 {
  public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t state) : state_(state) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform_open() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  private:
    std::uint64_t state_;
};

inline SplitMix64 sample_stream(std::uint64_t seed, std::uint64_t index) {
    SplitMix64 mixer(seed ^ (index * 0xd1b54a32d192ed03ULL));
    return SplitMix64(mixer());
}

/// Inverse-CDF draw.
inline double sample_load(const LoadDensity& d, SplitMix64& rng) {
    if (d.is_point_mass()) return d.atom_location();
    return d.quantile(rng.uniform_open());
}

inline EmpiricalDrop run_mc(const FeederSpec& spec, const McConfig& cfg) {
    validate(spec);
    if (cfg.samples == 0) throw ConfigError("samples", "must be at least 1");
    if (cfg.shards == 0) throw ConfigError("shards", "must be at least 1");
    const std::size_t n = spec.bus_count();
    const std::vector<double> rhos = spec.rhos();
    std::vector<double> drops(cfg.samples);
    std::vector<double> flows(cfg.samples);

    const auto work = [&](std::size_t begin, std::size_t end) {
        std::vector<double> loads(n);
        const std::vector<double> zeros(n, 0.0);
        for (std::size_t i = begin; i < end; ++i) {
            SplitMix64 rng = sample_stream(cfg.seed, i);
            double total = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                loads[k] = sample_load(spec.loads[k], rng);
                total += loads[k];
            }
            flows[i] = total;
            if (cfg.nonlinear) {
                const FlowProfile fp = solve_nonlinear(spec, loads, zeros);
                drops[i] = std::max(0.0, spec.base_voltage - *std::min_element(fp.voltage.begin(), fp.voltage.end()));
            } else {
                drops[i] = head_drop(rhos, loads);
            }
        }
    };

    const std::size_t shards = std::min(cfg.shards, cfg.samples);
    const std::size_t chunk = (cfg.samples + shards - 1) / shards;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t s = 0; s < shards; ++s) {
        const std::size_t b = s * chunk;
        const std::size_t e = std::min(cfg.samples, b + chunk);
        if (b < e) ranges.emplace_back(b, e);
    }
    if (ranges.size() == 1) {
        work(ranges[0].first, ranges[0].second);
    } else {
        std::vector<std::thread> pool;
        for (const auto& [b, e] : ranges) pool.emplace_back(work, b, e);
        for (auto& t : pool) t.join();
    }

    EmpiricalDrop out;
    const std::size_t keep = std::min(cfg.retain_joint, cfg.samples);
    out.joint.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.joint.emplace_back(flows[i], drops[i]);

    // sort each shard, then merge in shard order
    for (const auto& [b, e] : ranges)
        std::sort(drops.begin() + static_cast<std::ptrdiff_t>(b), drops.begin() + static_cast<std::ptrdiff_t>(e));
    for (std::size_t s = 1; s < ranges.size(); ++s)
        std::inplace_merge(drops.begin(), drops.begin() + static_cast<std::ptrdiff_t>(ranges[s].first),
                           drops.begin() + static_cast<std::ptrdiff_t>(ranges[s].second));
    out.zero_count = static_cast<std::size_t>(std::count(drops.begin(), drops.end(), 0.0));
    out.sorted_drop = std::move(drops);
    return out;
}

/// sup_x |F(x) - G(x)| between the gridded law and the empirical CDF.
inline double kolmogorov_distance(const DropDistribution& dp, const EmpiricalDrop& mc) {
    const auto& xs = mc.sorted_drop;
    const double n = static_cast<double>(xs.size());
    if (xs.empty()) return 1.0;
    double worst = std::abs(dp.total_mass() - 1.0);
    for (std::size_t i = 0; i < xs.size();) {
        std::size_t j = i;
        while (j < xs.size() && xs[j] == xs[i]) ++j;
        const double below = static_cast<double>(i) / n;
        const double upto = static_cast<double>(j) / n;
        worst = std::max(worst, std::abs(dp.cdf(xs[i]) - upto));
        worst = std::max(worst, std::abs(dp.cdf_left(xs[i]) - below));
        i = j;
    }
    for (const auto& a : dp.law().atoms()) {
        const auto lo = std::lower_bound(xs.begin(), xs.end(), a.location) - xs.begin();
        const auto hi = std::upper_bound(xs.begin(), xs.end(), a.location) - xs.begin();
        worst = std::max(worst, std::abs(dp.cdf(a.location) - static_cast<double>(hi) / n));
        worst = std::max(worst, std::abs(dp.cdf_left(a.location) - static_cast<double>(lo) / n));
    }
    return worst;
}

struct CompareThresholds {
    double kolmogorov = 0.01;
    double atom = 0.005;
};

struct CompareReport {
    std::size_t samples = 0;
    double kolmogorov_distance = 0.0;
    double kolmogorov_threshold = 0.0;
    double atom_dp = 0.0;
    double atom_mc = 0.0;
    double atom_threshold = 0.0;
    double mean_dp = 0.0;
    double mean_mc = 0.0;
    double std_dp = 0.0;
    double std_mc = 0.0;
    bool passed = false;
    std::vector<std::string> failures;

    nlohmann::json to_json() const {
        return {{"samples", samples},
                {"kolmogorov_distance", kolmogorov_distance},
                {"kolmogorov_threshold", kolmogorov_threshold},
                {"atom_at_zero", {{"dp", atom_dp}, {"mc", atom_mc}, {"difference", std::abs(atom_dp - atom_mc)},
                                  {"threshold", atom_threshold}}},
                {"mean", {{"dp", mean_dp}, {"mc", mean_mc}, {"difference", mean_dp - mean_mc}}},
                {"std", {{"dp", std_dp}, {"mc", std_mc}, {"difference", std_dp - std_mc}}},
                {"passed", passed},
                {"failures", failures}};
    }
};

inline CompareReport compare(const DropDistribution& dp, const EmpiricalDrop& mc, const CompareThresholds& th = {}) {
    CompareReport r;
    r.samples = mc.size();
    r.kolmogorov_distance = kolmogorov_distance(dp, mc);
    // three standard errors of an empirical CDF value at its worst (p = 1/2)
    const double mc_error = mc.size() ? 1.5 / std::sqrt(static_cast<double>(mc.size())) : 1.0;
    r.kolmogorov_threshold = std::max(th.kolmogorov, mc_error);
    r.atom_dp = dp.atom_at_zero();
    r.atom_mc = mc.zero_frequency();
    r.atom_threshold = th.atom;
    const auto ms = dp.mean_std();
    r.mean_dp = ms.mean;
    r.std_dp = ms.stddev;
    r.mean_mc = mc.mean();
    r.std_mc = mc.stddev();
    if (r.kolmogorov_distance > r.kolmogorov_threshold) r.failures.emplace_back("kolmogorov_distance");
    if (std::abs(r.atom_dp - r.atom_mc) > r.atom_threshold) r.failures.emplace_back("atom_at_zero");
    r.passed = r.failures.empty();
    return r;
}

}  // namespace vdrop
