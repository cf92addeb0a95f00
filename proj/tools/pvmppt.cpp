// pvmppt: curves, closed-loop runs, seed sweeps and zone-network training.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pvmppt/config.hpp"
#include "pvmppt/io.hpp"

namespace fs = std::filesystem;
using namespace pvmppt;

namespace {

enum Exit : int { ok = 0, usage = 1, config = 2, numerical = 3, filesystem = 4 };

struct CliConfig {
    std::vector<std::string> scenarios;
    std::string out = ".";
    std::string seeds;
    std::string controllers;
    unsigned threads = 0;
    int verbosity = 0;
};

std::uint64_t parse_seed(const std::string& s) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || s.empty())
        throw ConfigError("--seeds: '" + s + "' is not a seed");
    return v;
}

/// "7", "1,2,5" or ranges such as "1-100", mixed freely.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        const auto dash = part.find('-');
        if (dash == std::string::npos) {
            out.push_back(parse_seed(part));
            continue;
        }
        const auto lo = parse_seed(part.substr(0, dash));
        const auto hi = parse_seed(part.substr(dash + 1));
        if (hi < lo) throw ConfigError("--seeds: empty range '" + part + "'");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
    }
    if (out.empty()) throw ConfigError("--seeds: no seeds given");
    return out;
}

std::vector<ControllerKind> parse_controllers(const std::string& text) {
    std::vector<ControllerKind> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) out.push_back(parse_controller(part));
    return out;
}

Config load_one(const CliConfig& cli, bool load_model = true) {
    if (cli.scenarios.size() != 1) throw ConfigError("exactly one --scenario is required");
    return load_config_file(cli.scenarios.front(), load_model);
}

void write_json(const fs::path& path, const Json& j) {
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    finish_output(out, path);
}

int cmd_curve(const CliConfig& cli) {
    const Config cfg = load_one(cli, false);
    const auto& sc = cfg.scenario;
    const StringModel model(sc.modules, sc.shading.front().pattern, sc.bypass_drop);
    const auto curve = string_curve(model, cfg.curve_samples);
    const auto gmpp = find_gmpp(curve);

    const fs::path dir(cli.out);
    auto csv_path = dir / "curve.csv";
    auto csv = open_output(csv_path);
    write_curve_csv(csv, curve);
    finish_output(csv, csv_path);
    write_json(dir / "peaks.json", peaks_json(curve, gmpp));

    std::cout << sc.name << ": " << curve.peaks.size() << " peak(s), GMPP " << gmpp.power << " W at " << gmpp.voltage
              << " V\n";
    return ok;
}

int cmd_run(const CliConfig& cli) {
    Config cfg = load_one(cli);
    auto& sc = cfg.scenario;
    if (!cli.controllers.empty()) {
        const auto kinds = parse_controllers(cli.controllers);
        if (kinds.size() != 1) throw ConfigError("run takes a single --controller");
        sc.controller.kind = kinds.front();
    }
    if (!cli.seeds.empty()) {
        const auto seeds = parse_seeds(cli.seeds);
        if (seeds.size() != 1) throw ConfigError("run takes a single seed; use batch for sweeps");
        sc.seed = seeds.front();
    }
    const auto result = run(sc);

    const fs::path dir(cli.out);
    auto trace_path = dir / "trace.csv";
    auto trace = open_output(trace_path);
    write_trace_csv(trace, result.trace);
    finish_output(trace, trace_path);
    auto log_path = dir / "evaluations.csv";
    auto log = open_output(log_path);
    write_evaluations_csv(log, result.evaluations);
    finish_output(log, log_path);
    write_json(dir / "metrics.json", metrics_json(result.metrics));

    const auto& m = result.metrics;
    std::cout << sc.name << " [" << to_string(sc.controller.kind) << ", seed " << sc.seed << "]: final " << m.final_power
              << " W of " << m.gmpp_power << " W, efficiency " << m.tracking_efficiency << ", "
              << (m.converged_to_global ? "global" : "not global") << '\n';
    return ok;
}

int cmd_batch(const CliConfig& cli) {
    if (cli.scenarios.empty()) throw ConfigError("batch needs at least one --scenario");
    const auto seeds = parse_seeds(cli.seeds.empty() ? "1" : cli.seeds);
    std::vector<BatchJob> jobs;
    unsigned threads = cli.threads;
    for (const auto& path : cli.scenarios) {
        const Config cfg = load_config_file(path);
        if (threads == 0) threads = static_cast<unsigned>(cfg.threads);
        std::vector<ControllerKind> kinds = cfg.batch_controllers;
        if (!cli.controllers.empty()) kinds = parse_controllers(cli.controllers);
        if (kinds.empty()) kinds.push_back(cfg.scenario.controller.kind);
        for (auto kind : kinds)
            for (auto seed : seeds) {
                Scenario s = cfg.scenario;
                s.controller.kind = kind;
                s.seed = seed;
                jobs.push_back({s.name + "/" + std::string(to_string(kind)) + "/" + std::to_string(seed), s});
            }
    }
    const auto rows = run_batch(jobs, threads);
    const auto stats = paired_stats(rows);

    const fs::path dir(cli.out);
    auto summary_path = dir / "summary.csv";
    auto summary = open_output(summary_path);
    write_batch_csv(summary, rows);
    finish_output(summary, summary_path);
    auto paired_path = dir / "paired.csv";
    auto paired = open_output(paired_path);
    write_paired_csv(paired, stats);
    finish_output(paired, paired_path);

    std::size_t failed = 0;
    for (const auto& r : rows)
        if (!r.metrics) {
            ++failed;
            std::cerr << "row " << r.key << " failed: " << r.error << '\n';
        }
    std::cout << rows.size() << " run(s), " << failed << " failed\n";
    for (const auto& s : stats) std::cout << "  " << s.name << ": " << s.wins << "/" << s.total << '\n';
    return failed ? numerical : ok;
}

int cmd_train_ann(const CliConfig& cli) {
    const Config cfg = load_one(cli, false);
    const auto report = train_zone_model(cfg.scenario.modules, cfg.ann);

    const fs::path dir(cli.out);
    auto model_path = dir / "zone_model.txt";
    auto model = open_output(model_path);
    save_mlp(model, report.net);
    finish_output(model, model_path);
    write_json(dir / "training_report.json", training_report_json(report));

    if (!report.trained) std::cout << "untrained: epochs = 0, initial weights written\n";
    std::cout << "containment " << report.grid_contained << "/" << report.grid_size << ", held-out within 5 V "
              << report.holdout_within_5v << "/" << report.holdout_size << ", final mse " << report.final_mse << '\n';
    if (cli.verbosity > 0)
        for (const auto& w : report.warnings) std::cout << "  " << w << '\n';
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PV maximum power point tracking simulator"};
    app.require_subcommand(1);
    CliConfig cli;

    const auto valid_controllers = [](const std::string& v) {
        try {
            parse_controllers(v);
            return std::string();
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
    };
    auto common = [&](CLI::App* sub, bool many_scenarios) {
        auto* opt = sub->add_option("--scenario", cli.scenarios, "scenario configuration file")->required();
        if (!many_scenarios) opt->expected(1);
        sub->add_option("--out", cli.out, "output directory")->capture_default_str();
        sub->add_flag("-v,--verbose", cli.verbosity, "more output");
    };
    auto* curve = app.add_subcommand("curve", "write the P-V / I-V curve and its peaks");
    common(curve, false);
    auto* run_cmd = app.add_subcommand("run", "simulate one scenario");
    common(run_cmd, false);
    run_cmd->add_option("--controller", cli.controllers, "po, pso, cs or hybrid")->check(valid_controllers);
    run_cmd->add_option("--seeds", cli.seeds, "seed for the run");
    auto* batch = app.add_subcommand("batch", "run scenarios over many seeds");
    common(batch, true);
    batch->add_option("--controller", cli.controllers, "comma separated list of po, pso, cs, hybrid")
        ->check(valid_controllers);
    batch->add_option("--seeds", cli.seeds, "seeds, e.g. 1-100 or 1,4,9");
    batch->add_option("--threads", cli.threads, "worker threads (0 = all cores)");
    auto* train_cmd = app.add_subcommand("train-ann", "train the zone network");
    common(train_cmd, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        if (*curve) return cmd_curve(cli);
        if (*run_cmd) return cmd_run(cli);
        if (*batch) return cmd_batch(cli);
        if (*train_cmd) return cmd_train_ann(cli);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config;
    } catch (const FileError& e) {
        std::cerr << "file error: " << e.what() << '\n';
        return filesystem;
    } catch (const Error& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return numerical;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "file error: " << e.what() << '\n';
        return filesystem;
    }
    return usage;
}
