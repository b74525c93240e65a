#include <gtest/gtest.h>

#include <cmath>

#include "vdrop/mc_oracle.hpp"

using vdrop::LoadDensity;
using vdrop::McConfig;

namespace {

LoadDensity paper_load() { return LoadDensity::two_sided_exponential(0.25, 3.0, 1.0); }

McConfig mc(std::size_t samples, std::uint64_t seed, std::size_t shards = 1) {
    McConfig c;
    c.samples = samples;
    c.seed = seed;
    c.shards = shards;
    return c;
}

}  // namespace

TEST(McOracle, PointMassSamplesAreConstant) {
    vdrop::SplitMix64 rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(vdrop::sample_load(LoadDensity::point_mass(2.0), rng), 2.0);
}

TEST(McOracle, UniformsStayInsideOpenInterval) {
    vdrop::SplitMix64 rng(0);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform_open();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(McOracle, SampleMomentsWithinCltBands) {
    const auto d = paper_load();
    const std::size_t n = 1000000;
    double sum = 0.0;
    std::size_t negative = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = vdrop::sample_stream(2024, i);
        const double s = vdrop::sample_load(d, rng);
        sum += s;
        if (s <= 0.0) ++negative;
    }
    // three standard errors: sigma = sqrt(10), Bernoulli(0.25)
    EXPECT_NEAR(sum / n, 2.0, 3.0 * std::sqrt(10.0) / 1000.0);
    EXPECT_NEAR(static_cast<double>(negative) / n, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST(McOracle, PointLoadsGiveExactDrop) {
    const auto spec = vdrop::uniform_feeder(4, 1e-3, LoadDensity::point_mass(2.0));
    const auto emp = vdrop::run_mc(spec, mc(1000, 3));
    const double expected = vdrop::max_drop(spec, std::vector<double>(4, 2.0)).max_drop;
    for (double d : emp.sorted_drop) EXPECT_EQ(d, expected);
    EXPECT_EQ(emp.zero_count, 0u);
}

TEST(McOracle, PureInjectionNeverDrops) {
    const auto spec = vdrop::uniform_feeder(5, 1e-3, LoadDensity::uniform(-3.0, -0.5));
    const auto emp = vdrop::run_mc(spec, mc(5000, 11));
    EXPECT_EQ(emp.zero_count, emp.size());
}

TEST(McOracle, IdenticalAcrossShardCounts) {
    const auto spec = vdrop::uniform_feeder(4, 1e-3, paper_load());
    const auto one = vdrop::run_mc(spec, mc(100003, 77, 1));
    for (std::size_t shards : {4u, 8u}) EXPECT_TRUE(one == vdrop::run_mc(spec, mc(100003, 77, shards)));
}

TEST(McOracle, DifferentSeedsDiffer) {
    const auto spec = vdrop::uniform_feeder(2, 1e-3, paper_load());
    EXPECT_NE(vdrop::run_mc(spec, mc(1000, 1)).sorted_drop, vdrop::run_mc(spec, mc(1000, 2)).sorted_drop);
}

TEST(McOracle, JointSamplesRetainedInOrder) {
    const auto spec = vdrop::uniform_feeder(3, 1e-3, paper_load());
    auto cfg = mc(500, 9, 3);
    cfg.retain_joint = 50;
    const auto emp = vdrop::run_mc(spec, cfg);
    ASSERT_EQ(emp.joint.size(), 50u);
    for (std::size_t i = 0; i < 50; ++i) {
        auto rng = vdrop::sample_stream(9, i);
        std::vector<double> s(3);
        double total = 0.0;
        for (auto& v : s) total += (v = vdrop::sample_load(paper_load(), rng));
        EXPECT_EQ(emp.joint[i].first, total);
        EXPECT_EQ(emp.joint[i].second, vdrop::max_drop(spec, s).max_drop);
    }
}

TEST(McOracle, NonlinearReplayCloseToLinear) {
    const auto spec = vdrop::uniform_feeder(4, 1e-3, paper_load());
    auto cfg = mc(20000, 5);
    const auto lin = vdrop::run_mc(spec, cfg);
    cfg.nonlinear = true;
    const auto nl = vdrop::run_mc(spec, cfg);
    EXPECT_NEAR(nl.mean(), lin.mean(), 1e-3);
}

TEST(McOracle, CompareIdenticalAtoms) {
    const vdrop::DropDistribution dp(vdrop::MixedDensity1D(std::nullopt, {{0.002, 1.0}}));
    vdrop::EmpiricalDrop emp;
    emp.sorted_drop.assign(1000, 0.002);
    const auto r = vdrop::compare(dp, emp);
    EXPECT_EQ(r.kolmogorov_distance, 0.0);
    EXPECT_TRUE(r.passed);
}

TEST(McOracle, CompareFlagsAtomMismatch) {
    const vdrop::DropDistribution dp(vdrop::MixedDensity1D(
        vdrop::Grid1D(vdrop::Axis::over(0.0, 1.0, 10), std::vector<double>(10, 1.0)), {}));
    vdrop::EmpiricalDrop emp;
    for (int i = 0; i < 1000; ++i) emp.sorted_drop.push_back(i < 500 ? 0.0 : (i - 500 + 0.5) / 500.0);
    emp.zero_count = 500;
    const auto r = vdrop::compare(dp, emp);
    EXPECT_FALSE(r.passed);
    EXPECT_NE(std::find(r.failures.begin(), r.failures.end(), "atom_at_zero"), r.failures.end());
    EXPECT_NEAR(r.kolmogorov_distance, 0.5, 1e-12);
    EXPECT_EQ(r.to_json()["passed"], false);
}

TEST(McOracle, KolmogorovDistanceShrinksLikeInverseRoot) {
    // Delta0 = rho * s for one bus with s uniform on (0, 1): exact law is uniform on (0, rho)
    const double rho = 1e-3;
    const auto spec = vdrop::uniform_feeder(1, rho, LoadDensity::uniform(0.0, 1.0));
    const vdrop::DropDistribution exact(
        vdrop::MixedDensity1D(vdrop::Grid1D(vdrop::Axis::over(0.0, rho, 2), {1.0 / rho, 1.0 / rho}), {}));
    std::vector<double> xs, ys;
    for (std::size_t n : {1000u, 10000u, 100000u}) {
        double mean = 0.0;
        const int repeats = 20;
        for (int r = 0; r < repeats; ++r) mean += vdrop::kolmogorov_distance(exact, vdrop::run_mc(spec, mc(n, 1000 + r)));
        mean /= repeats;
        // E[D_n] ~ sqrt(pi/2) ln 2 / sqrt(n)
        EXPECT_NEAR(mean * std::sqrt(static_cast<double>(n)), 0.8687, 0.25);
        xs.push_back(std::log(static_cast<double>(n)));
        ys.push_back(std::log(mean));
    }
    const double slope = (ys.back() - ys.front()) / (xs.back() - xs.front());
    EXPECT_NEAR(slope, -0.5, 0.1);
}
