#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vdrop/feeder.hpp"

using vdrop::ConfigError;
using vdrop::LoadDensity;

namespace {

std::string config_path(const std::string& name) { return std::string(VDROP_SOURCE_DIR) + "/configs/" + name; }

std::string field_of(const std::string& text) {
    try {
        vdrop::parse_feeder_string(text);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "<no error>";
}

}  // namespace

TEST(Feeder, ParsesFourBusConfig) {
    const auto spec = vdrop::parse_feeder(config_path("paper_4bus.json"));
    ASSERT_EQ(spec.bus_count(), 4u);
    EXPECT_EQ(spec.base_voltage, 1.0);
    for (const auto& seg : spec.segments) EXPECT_DOUBLE_EQ(seg.rho, 1e-3);
    for (const auto& l : spec.loads) EXPECT_EQ(l, LoadDensity::two_sided_exponential(0.25, 3.0, 1.0));
}

TEST(Feeder, SingleBusPointMassAtZero) {
    const auto spec = vdrop::parse_feeder(config_path("zero_load.json"));
    ASSERT_EQ(spec.bus_count(), 1u);
    EXPECT_TRUE(spec.loads[0].is_point_mass());
    EXPECT_EQ(spec.loads[0].atom_location(), 0.0);
}

TEST(Feeder, CountMismatchNamesLoads) {
    const std::string text = R"({"segments": [{"r": 1e-3}, {"r": 1e-3}],
        "loads": [{"family": "point_mass", "location": 1},
                  {"family": "point_mass", "location": 1},
                  {"family": "point_mass", "location": 1}]})";
    try {
        vdrop::parse_feeder_string(text);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "loads");
        EXPECT_NE(std::string(e.what()).find("count"), std::string::npos);
    }
}

TEST(Feeder, MissingAndMalformedFiles) {
    EXPECT_THROW(vdrop::parse_feeder(config_path("does_not_exist.json")), ConfigError);
    EXPECT_THROW(vdrop::parse_feeder(std::string(VDROP_SOURCE_DIR) + "/tests/data/malformed.json"), ConfigError);
}

TEST(Feeder, FieldPathsInErrors) {
    EXPECT_EQ(field_of(R"({"segments": [{"r": -1}], "loads": [{"family": "point_mass", "location": 1}]})"),
              "segments[0].r");
    EXPECT_EQ(field_of(R"({"segments": [{"r": 1}], "loads": [{"family": "uniform", "lower": 2, "upper": 1}]})"),
              "loads[0].upper");
    EXPECT_EQ(field_of(R"({"segments": [{"r": 1}], "loads": [{"family": "nope"}]})"), "loads[0].family");
    EXPECT_EQ(field_of(R"({"base_voltage": 0, "segments": [{"r": 1}], "loads": [{"family": "point_mass", "location": 1}]})"),
              "base_voltage");
    EXPECT_EQ(field_of(R"({"segments": [{"r": 1, "y": 2}], "loads": [{"family": "point_mass", "location": 1}]})"),
              "segments[0].y");
    EXPECT_EQ(field_of(R"({"segments": [], "loads": []})"), "segments");
}

TEST(Feeder, ReactanceMustFollowAlpha) {
    const std::string text = R"({"alpha": 0.5, "segments": [{"r": 1e-3, "x": 1e-3}],
        "loads": [{"family": "point_mass", "location": 1}]})";
    EXPECT_EQ(field_of(text), "segments[0].x");
    const std::string ok = R"({"alpha": 0.5, "segments": [{"r": 1e-3}],
        "loads": [{"family": "point_mass", "location": 1}]})";
    const auto spec = vdrop::parse_feeder_string(ok);
    EXPECT_DOUBLE_EQ(spec.segments[0].reactance, 0.5e-3);
}

TEST(Feeder, RhoScalesWithBaseVoltage) {
    const auto spec = vdrop::parse_feeder_string(
        R"({"base_voltage": 2.0, "segments": [{"r": 4e-3}], "loads": [{"family": "point_mass", "location": 1}]})");
    EXPECT_DOUBLE_EQ(spec.segments[0].rho, 2e-3);
}

TEST(Feeder, CommentsAndUnderscoreKeysIgnored) {
    const auto spec = vdrop::parse_feeder_string(R"({
        // line comment
        "_note": "ignored",
        "segments": [{"r": 1e-3}],
        "loads": [{"family": "gaussian", "mean": 1, "stddev": 2, "_why": "x"}]})");
    EXPECT_EQ(spec.loads[0], LoadDensity::gaussian(1.0, 2.0));
}

TEST(Feeder, JsonRoundTrip) {
    for (const char* name : {"paper_4bus.json", "mixed_16bus.json", "monotone_8bus.json", "single_bus_point.json"}) {
        const auto spec = vdrop::parse_feeder(config_path(name));
        const auto again = vdrop::feeder_from_json(vdrop::feeder_to_json(spec));
        EXPECT_EQ(spec, again) << name;
    }
}

TEST(Feeder, UniformFeederBuilder) {
    const auto spec = vdrop::uniform_feeder(7, 2e-3, LoadDensity::point_mass(1.0), 1.0, 0.3);
    EXPECT_EQ(spec.bus_count(), 7u);
    EXPECT_DOUBLE_EQ(spec.segments[3].reactance, 0.3 * spec.segments[3].resistance);
    EXPECT_EQ(spec.rhos(), std::vector<double>(7, 2e-3));
}
