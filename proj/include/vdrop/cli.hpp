#pragma once

// Command-line front end: validate, deterministic, analyze, mc, compare, sweep.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vdrop/distflow.hpp"
#include "vdrop/dp_engine.hpp"
#include "vdrop/errors.hpp"
#include "vdrop/feeder.hpp"
#include "vdrop/mc_oracle.hpp"

namespace vdrop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kSchemaVersion = 1;

struct Options {
    std::string config;
    std::string out_dir = ".";
    std::size_t grid_s = 512;
    std::size_t grid_delta = 512;
    double tail_tol = 1e-6;
    std::size_t samples = 100000;
    std::optional<std::uint64_t> seed;
    std::vector<double> thresholds;
    std::vector<double> quantiles;
    std::size_t threads = 1;
    double ks_max = 0.01;
    double atom_max = 0.005;
    bool nonlinear = false;
    std::size_t retain = 10000;
    std::vector<double> loads;
    std::string parameter;
    std::vector<double> values;

    DpConfig dp_config() const {
        DpConfig cfg;
        cfg.grid_s = grid_s;
        cfg.grid_delta = grid_delta;
        cfg.tail_tolerance = tail_tol;
        cfg.threads = threads;
        return cfg;
    }

    std::vector<double> quantile_list() const {
        return quantiles.empty() ? std::vector<double>{0.5, 0.9, 0.95, 0.99} : quantiles;
    }
};

namespace detail {

inline void check_probabilities(const std::vector<double>& ps) {
    for (double p : ps)
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile", "probability " + std::to_string(p) + " outside [0, 1]");
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw ConfigError("out-dir", "cannot create '" + dir + "'");
    return std::filesystem::path(dir);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("out-dir", "cannot write '" + path.string() + "'");
    out << text;
}

inline nlohmann::json stage_json(const StageLog& s) {
    return {{"stage", s.stage},         {"bus", s.bus},           {"mass_in", s.mass_in},
            {"mass_out", s.mass_out},   {"truncated", s.truncated}, {"unlogged", s.unlogged},
            {"seconds", s.seconds}};
}

struct Analysis {
    DpReport report;
    double mean = 0.0;
    double stddev = 0.0;
    double twice_mean_exceedance = 0.0;
};

inline Analysis analyze_spec(const FeederSpec& spec, const Options& opt) {
    Analysis a;
    a.report = run(spec, opt.dp_config());
    const auto ms = a.report.drop.mean_std();
    a.mean = ms.mean;
    a.stddev = ms.stddev;
    a.twice_mean_exceedance = a.report.drop.prob_exceed(2.0 * ms.mean);
    return a;
}

inline nlohmann::json summary_json(const FeederSpec& spec, const Options& opt, const Analysis& a) {
    const DropDistribution& drop = a.report.drop;
    nlohmann::json quantiles = nlohmann::json::array();
    for (double p : opt.quantile_list()) quantiles.push_back({{"p", p}, {"value", drop.quantile(p)}});
    nlohmann::json exceed = nlohmann::json::array();
    for (double t : opt.thresholds) exceed.push_back({{"threshold", t}, {"probability", drop.prob_exceed(t)}});
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : a.report.stages) stages.push_back(stage_json(s));
    return {{"schema_version", kSchemaVersion},
            {"config", opt.config},
            {"n_buses", spec.bus_count()},
            {"grid", {{"s", opt.grid_s}, {"delta", opt.grid_delta}, {"tail_tolerance", opt.tail_tol}}},
            {"atom_at_zero", drop.atom_at_zero()},
            {"mean", a.mean},
            {"std", a.stddev},
            {"prob_exceed_twice_mean", {{"threshold", 2.0 * a.mean}, {"probability", a.twice_mean_exceedance}}},
            {"quantiles", quantiles},
            {"exceedance", exceed},
            {"mass",
             {{"final", a.report.final_mass},
              {"logged_truncation", a.report.logged_truncation()},
              {"unlogged_discrepancy", a.report.unlogged_discrepancy()}}},
            {"stages_executed", a.report.stages_executed},
            {"stages", stages},
            {"runtime_s", a.report.total_seconds}};
}

inline std::uint64_t resolve_seed(const Options& opt) {
    if (opt.seed) return *opt.seed;
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

inline McConfig mc_config(const Options& opt, std::uint64_t seed) {
    McConfig mc;
    mc.samples = opt.samples;
    mc.seed = seed;
    mc.shards = opt.threads;
    mc.retain_joint = opt.retain;
    mc.nonlinear = opt.nonlinear;
    return mc;
}

inline int cmd_validate(const Options& opt, std::ostream& out) {
    const FeederSpec spec = parse_feeder(opt.config);
    out << "ok: " << spec.bus_count() << " buses, V0 = " << spec.base_voltage << ", alpha = " << spec.alpha << '\n';
    for (std::size_t k = 0; k < spec.bus_count(); ++k) {
        const auto m = load_moments(spec.loads[k]);
        out << "  bus " << k + 1 << ": rho = " << spec.segments[k].rho << ", load " << spec.loads[k].family_name()
            << " mean = " << m.mean << " std = " << m.stddev << '\n';
    }
    return kExitOk;
}

inline int cmd_deterministic(const Options& opt, std::ostream& out) {
    const FeederSpec spec = parse_feeder(opt.config);
    if (opt.loads.size() != spec.bus_count())
        throw ConfigError("loads", "expected " + std::to_string(spec.bus_count()) + " values, got " +
                                       std::to_string(opt.loads.size()));
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["loads"] = opt.loads;
    const DropResult dr = max_drop(spec, opt.loads);
    j["max_drop"] = dr.max_drop;
    j["argmin_bus"] = dr.argmin_bus;
    j["drop"] = dr.drop;
    const FlowProfile lin = solve_linear(spec, opt.loads);
    j["linear"] = {{"voltage", lin.voltage}, {"flow", lin.real_flow}};
    if (opt.nonlinear) {
        const FlowProfile nl = solve_nonlinear(spec, opt.loads, std::vector<double>(spec.bus_count(), 0.0));
        j["nonlinear"] = {{"voltage", nl.voltage}, {"real_flow", nl.real_flow}, {"iterations", nl.iterations}};
    }
    const auto dir = prepare_out_dir(opt.out_dir);
    write_text(dir / "deterministic.json", j.dump(2) + "\n");
    out << "max drop " << dr.max_drop << " at bus " << dr.argmin_bus << '\n';
    return kExitOk;
}

inline int cmd_analyze(const Options& opt, std::ostream& out) {
    const FeederSpec spec = parse_feeder(opt.config);
    check_probabilities(opt.quantile_list());
    opt.dp_config().validate();
    const Analysis a = analyze_spec(spec, opt);
    const nlohmann::json summary = summary_json(spec, opt, a);
    std::ostringstream marginal;
    write_density_csv(marginal, a.report.drop.law());
    std::ostringstream joint;
    joint_to_csv(joint, a.report.final_state);

    const auto dir = prepare_out_dir(opt.out_dir);
    write_text(dir / "drop_marginal.csv", marginal.str());
    write_text(dir / "joint.csv", joint.str());
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    out << "atom at zero " << a.report.drop.atom_at_zero() << ", mean " << a.mean << ", std " << a.stddev
        << ", P(drop > 2 mean) " << a.twice_mean_exceedance << '\n';
    return kExitOk;
}

inline int cmd_mc(const Options& opt, std::ostream& out) {
    const FeederSpec spec = parse_feeder(opt.config);
    check_probabilities(opt.quantile_list());
    const std::uint64_t seed = resolve_seed(opt);
    const EmpiricalDrop emp = run_mc(spec, mc_config(opt, seed));

    nlohmann::json quantiles = nlohmann::json::array();
    for (double p : opt.quantile_list()) {
        const auto n = emp.size();
        const std::size_t idx = p <= 0.0 ? 0 : std::min(n - 1, static_cast<std::size_t>(std::ceil(p * n)) - 1);
        quantiles.push_back({{"p", p}, {"value", emp.sorted_drop[idx]}});
    }
    nlohmann::json exceed = nlohmann::json::array();
    for (double t : opt.thresholds) exceed.push_back({{"threshold", t}, {"probability", emp.prob_exceed(t)}});
    const double mean = emp.mean();
    const nlohmann::json summary = {{"schema_version", kSchemaVersion},
                                    {"config", opt.config},
                                    {"seed", seed},
                                    {"samples", emp.size()},
                                    {"nonlinear", opt.nonlinear},
                                    {"zero_frequency", emp.zero_frequency()},
                                    {"mean", mean},
                                    {"std", emp.stddev()},
                                    {"prob_exceed_twice_mean",
                                     {{"threshold", 2.0 * mean}, {"probability", emp.prob_exceed(2.0 * mean)}}},
                                    {"quantiles", quantiles},
                                    {"exceedance", exceed}};
    std::ostringstream samples;
    samples.precision(17);
    samples << "delta0,s0\n";
    for (const auto& [s0, d0] : emp.joint) samples << d0 << ',' << s0 << '\n';

    const auto dir = prepare_out_dir(opt.out_dir);
    write_text(dir / "mc_samples.csv", samples.str());
    write_text(dir / "mc_summary.json", summary.dump(2) + "\n");
    out << "seed " << seed << ", zero frequency " << emp.zero_frequency() << ", mean " << mean << '\n';
    return kExitOk;
}

inline int cmd_compare(const Options& opt, std::ostream& out) {
    const FeederSpec spec = parse_feeder(opt.config);
    opt.dp_config().validate();
    const std::uint64_t seed = resolve_seed(opt);
    const Analysis a = analyze_spec(spec, opt);
    const EmpiricalDrop emp = run_mc(spec, mc_config(opt, seed));
    const CompareReport cr = compare(a.report.drop, emp, {opt.ks_max, opt.atom_max});
    nlohmann::json j = cr.to_json();
    j["schema_version"] = kSchemaVersion;
    j["config"] = opt.config;
    j["seed"] = seed;
    j["grid"] = {{"s", opt.grid_s}, {"delta", opt.grid_delta}, {"tail_tolerance", opt.tail_tol}};
    j["prob_exceed_twice_mean"] = {{"dp", a.twice_mean_exceedance},
                                   {"mc", emp.prob_exceed(2.0 * emp.mean())}};
    j["mass"] = {{"logged_truncation", a.report.logged_truncation()},
                 {"unlogged_discrepancy", a.report.unlogged_discrepancy()}};
    const auto dir = prepare_out_dir(opt.out_dir);
    write_text(dir / "compare.json", j.dump(2) + "\n");
    out << (cr.passed ? "PASS" : "FAIL") << ": Kolmogorov distance " << cr.kolmogorov_distance << " (limit "
        << cr.kolmogorov_threshold << "), atom difference " << std::abs(cr.atom_dp - cr.atom_mc) << '\n';
    return cr.passed ? kExitOk : kExitValidation;
}

/// The feeder evaluated at one sweep point. For bus-count the configured
/// segments and loads are repeated cyclically.
inline FeederSpec sweep_point(const FeederSpec& base, const std::string& parameter, double value) {
    FeederSpec spec = base;
    if (parameter == "bus-count") {
        if (!(value >= 1.0) || value != std::floor(value))
            throw ConfigError("values", "bus count must be a positive integer");
        const auto n = static_cast<std::size_t>(value);
        spec.segments.clear();
        spec.loads.clear();
        for (std::size_t k = 0; k < n; ++k) {
            spec.segments.push_back(base.segments[k % base.bus_count()]);
            spec.loads.push_back(base.loads[k % base.bus_count()]);
        }
    } else if (parameter == "injection-probability-scale") {
        for (auto& l : spec.loads) l = l.with_injection_probability_scaled(value);
    } else if (parameter == "load-mean-scale") {
        for (auto& l : spec.loads) l = l.scaled(value);
    } else {
        throw ConfigError("parameter", "unknown sweep parameter '" + parameter + "'");
    }
    validate(spec);
    return spec;
}

inline int cmd_sweep(const Options& opt, std::ostream& out) {
    const FeederSpec base = parse_feeder(opt.config);
    opt.dp_config().validate();
    if (opt.values.empty()) throw ConfigError("values", "at least one value is required");
    // check every point before any output is produced
    for (double v : opt.values) sweep_point(base, opt.parameter, v);

    const auto dir = prepare_out_dir(opt.out_dir);
    std::ofstream csv(dir / "sweep.csv");
    if (!csv) throw ConfigError("out-dir", "cannot write sweep.csv");
    csv.precision(17);
    csv << "value,n_buses,threshold,prob_exceed,mean_drop,std_drop,atom_zero,runtime_s,truncated_mass,unlogged_mass\n"
        << std::flush;
    for (double v : opt.values) {
        const FeederSpec spec = sweep_point(base, opt.parameter, v);
        const Analysis a = analyze_spec(spec, opt);
        const double threshold = opt.thresholds.empty() ? 2.0 * a.mean : opt.thresholds.front();
        csv << v << ',' << spec.bus_count() << ',' << threshold << ',' << a.report.drop.prob_exceed(threshold) << ','
            << a.mean << ',' << a.stddev << ',' << a.report.drop.atom_at_zero() << ',' << a.report.total_seconds
            << ',' << a.report.logged_truncation() << ',' << a.report.unlogged_discrepancy() << '\n'
            << std::flush;
        out << opt.parameter << " = " << v << ": mean " << a.mean << ", runtime " << a.report.total_seconds << " s\n";
    }
    return kExitOk;
}

}  // namespace detail

/// Entry point; returns the process exit code.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Probability distribution of the maximal voltage drop on a radial feeder"};
    app.require_subcommand(1);
    Options opt;

    const auto add_config = [&](CLI::App* sub) {
        sub->add_option("config", opt.config, "Feeder configuration (JSON)")->required();
    };
    const auto add_grid = [&](CLI::App* sub) {
        sub->add_option("--grid-s", opt.grid_s, "Cells along the flow axis");
        sub->add_option("--grid-delta", opt.grid_delta, "Cells along the drop axis");
        sub->add_option("--tail-tol", opt.tail_tol, "Tail mass that may be cut per stage");
    };
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out-dir", opt.out_dir, "Output directory");
        sub->add_option("--threads", opt.threads, "Worker threads");
        sub->add_option("--threshold", opt.thresholds, "Exceedance threshold in p.u. (repeatable)");
        sub->add_option("--quantile", opt.quantiles, "Quantile level (repeatable)");
    };
    const auto add_mc = [&](CLI::App* sub) {
        sub->add_option("--samples", opt.samples, "Monte Carlo sample count");
        sub->add_option("--seed", opt.seed, "Random seed (chosen and recorded when omitted)");
        sub->add_option("--retain", opt.retain, "Samples written to mc_samples.csv");
        sub->add_flag("--nonlinear", opt.nonlinear, "Replay samples through the full DistFlow sweep");
    };

    auto* validate_cmd = app.add_subcommand("validate", "Parse and check a configuration");
    add_config(validate_cmd);

    auto* det = app.add_subcommand("deterministic", "Voltage profile for one load vector");
    add_config(det);
    det->add_option("--loads", opt.loads, "Combined load per bus in kW")->required()->delimiter(',');
    det->add_flag("--nonlinear", opt.nonlinear, "Also run the full DistFlow sweep");
    det->add_option("--out-dir", opt.out_dir, "Output directory");

    auto* analyze = app.add_subcommand("analyze", "Distribution of the maximal drop by dynamic programming");
    add_config(analyze);
    add_grid(analyze);
    add_common(analyze);

    auto* mc = app.add_subcommand("mc", "Monte Carlo estimate of the maximal drop");
    add_config(mc);
    add_mc(mc);
    add_common(mc);

    auto* cmp = app.add_subcommand("compare", "Check the DP result against Monte Carlo");
    add_config(cmp);
    add_grid(cmp);
    add_mc(cmp);
    add_common(cmp);
    cmp->add_option("--ks-max", opt.ks_max, "Kolmogorov distance limit");
    cmp->add_option("--atom-max", opt.atom_max, "Limit on the zero-atom difference");

    auto* sweep = app.add_subcommand("sweep", "Run the analysis over a parameter range");
    add_config(sweep);
    add_grid(sweep);
    add_common(sweep);
    sweep->add_option("--parameter", opt.parameter, "bus-count | injection-probability-scale | load-mean-scale")
        ->required()
        ->check(CLI::IsMember({"bus-count", "injection-probability-scale", "load-mean-scale"}));
    sweep->add_option("--values", opt.values, "Parameter values")->required()->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (validate_cmd->parsed()) return detail::cmd_validate(opt, out);
        if (det->parsed()) return detail::cmd_deterministic(opt, out);
        if (analyze->parsed()) return detail::cmd_analyze(opt, out);
        if (mc->parsed()) return detail::cmd_mc(opt, out);
        if (cmp->parsed()) return detail::cmd_compare(opt, out);
        if (sweep->parsed()) return detail::cmd_sweep(opt, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitConfig;
}

}  // namespace vdrop::cli
