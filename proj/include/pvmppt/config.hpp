#pragma once

// Plain-text configuration: one `key = value` per line, `#` starts a comment.
// Lists are whitespace separated. Every error names the offending line.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pvmppt/ann.hpp"
#include "pvmppt/error.hpp"
#include "pvmppt/sim.hpp"

namespace pvmppt {

struct ConfigEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

struct ConfigText {
    std::string source = "<config>";
    std::vector<ConfigEntry> entries;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream is{std::string(s)};
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

} // namespace detail

inline ConfigText parse_config_text(std::istream& is, std::string source = "<config>") {
    ConfigText out;
    out.source = std::move(source);
    std::string raw;
    for (std::size_t line = 1; std::getline(is, raw); ++line) {
        std::string_view s = raw;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) throw ParseError(out.source, line, "expected 'key = value'");
        const auto key = detail::trim(s.substr(0, eq));
        const auto value = detail::trim(s.substr(eq + 1));
        if (key.empty()) throw ParseError(out.source, line, "missing key before '='");
        if (key.find_first_of(" \t") != std::string_view::npos)
            throw ParseError(out.source, line, "key '" + std::string(key) + "' contains whitespace");
        if (value.empty()) throw ParseError(out.source, line, "missing value for '" + std::string(key) + "'");
        out.entries.push_back({std::string(key), std::string(value), line});
    }
    return out;
}

inline ConfigText read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open config file '" + path.string() + "'");
    return parse_config_text(in, path.string());
}

/// Everything a command can read from one configuration file.
struct Config {
    Scenario scenario;
    std::size_t curve_samples = 1000;
    ZoneTrainingConfig ann;
    std::vector<ControllerKind> batch_controllers;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::optional<std::filesystem::path> zone_model_path;
};

inline Mlp load_mlp_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open model file '" + path.string() + "'");
    return load_mlp(in);
}

/// Builds a configuration from parsed entries. Relative paths resolve
/// against base_dir. A referenced zone model is read only when load_model
/// is set.
inline Config load_config(const ConfigText& text, const std::filesystem::path& base_dir = ".",
                          bool load_model = true) {
    Config cfg;
    Scenario& sc = cfg.scenario;
    ControllerConfig& cc = sc.controller;
    Datasheet sheet;
    bool custom_module = false;
    std::size_t n_modules = 3;
    double temperature_c = constants::stc_temperature - 273.15;
    std::optional<std::vector<double>> shading0;
    std::size_t shading_line = 0;
    struct Step {
        double t;
        std::vector<double> g;
        std::size_t line;
    };
    std::vector<Step> steps;

    const ConfigEntry* cur = nullptr;
    auto fail = [&](const std::string& what) -> ParseError { return ParseError(text.source, cur->line, what); };

    auto number = [&](std::string_view tok) {
        double x = 0.0;
        const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), x);
        if (r.ec != std::errc{} || r.ptr != tok.data() + tok.size() || !std::isfinite(x))
            throw fail("'" + cur->key + "': '" + std::string(tok) + "' is not a number");
        return x;
    };
    auto real = [&] { return number(cur->value); };
    auto positive = [&] {
        const double x = real();
        if (!(x > 0)) throw fail("'" + cur->key + "' must be positive");
        return x;
    };
    auto count = [&]() -> std::size_t {
        std::uint64_t n = 0;
        const auto& v = cur->value;
        const auto r = std::from_chars(v.data(), v.data() + v.size(), n);
        if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
            throw fail("'" + cur->key + "': '" + v + "' is not a non-negative integer");
        return static_cast<std::size_t>(n);
    };
    auto flag = [&] {
        if (cur->value == "true" || cur->value == "yes" || cur->value == "1") return true;
        if (cur->value == "false" || cur->value == "no" || cur->value == "0") return false;
        throw fail("'" + cur->key + "': expected true or false, got '" + cur->value + "'");
    };
    auto numbers = [&] {
        std::vector<double> out;
        for (const auto& w : detail::split_words(cur->value)) out.push_back(number(w));
        return out;
    };
    auto bounds = [&] {
        const auto v = numbers();
        if (v.size() != 2) throw fail("'" + cur->key + "': expected two numbers 'lo hi'");
        if (!(v[0] < v[1])) throw fail("'" + cur->key + "': lower bound must be below upper bound");
        return Bounds{v[0], v[1]};
    };
    auto space = [&] {
        if (cur->value == "duty") return DecisionSpace::Duty;
        if (cur->value == "voltage") return DecisionSpace::Voltage;
        throw fail("'" + cur->key + "': expected duty or voltage, got '" + cur->value + "'");
    };
    auto controller = [&](const std::string& name) {
        try {
            return parse_controller(name);
        } catch (const ConfigError& e) {
            throw fail(e.what());
        }
    };

    using Handler = std::function<void()>;
    const std::map<std::string, Handler, std::less<>> handlers{
        {"name", [&] { sc.name = cur->value; }},
        {"seed", [&] { sc.seed = count(); }},
        {"modules",
         [&] {
             n_modules = count();
             if (n_modules == 0) throw fail("'modules' must be at least 1");
         }},
        {"module.v_oc", [&] { sheet.v_oc = positive(); }},
        {"module.i_sc", [&] { sheet.i_sc = positive(); }},
        {"module.v_mp", [&] { sheet.v_mp = positive(); }},
        {"module.i_mp", [&] { sheet.i_mp = positive(); }},
        {"module.n_cells", [&] { sheet.n_cells = static_cast<int>(count()); }},
        {"module.k_i", [&] { sheet.k_i = real(); }},
        {"module.k_v", [&] { sheet.k_v = real(); }},
        {"module.ideality", [&] { sheet.ideality = positive(); }},
        {"module.lossless", [&] { sheet.lossless = flag(); }},
        {"bypass_drop", [&] { sc.bypass_drop = real(); }},
        {"temperature", [&] { temperature_c = real(); }},
        {"shading",
         [&] {
             shading0 = numbers();
             shading_line = cur->line;
         }},
        {"shading_step",
         [&] {
             auto v = numbers();
             if (v.size() < 2) throw fail("'shading_step': expected 'time g1 g2 ...'");
             const double t = v.front();
             v.erase(v.begin());
             steps.push_back({t, std::move(v), cur->line});
         }},
        {"converter.c_in", [&] { sc.converter.c_in = positive(); }},
        {"converter.c_out", [&] { sc.converter.c_out = positive(); }},
        {"converter.inductance", [&] { sc.converter.inductance = positive(); }},
        {"converter.r_load", [&] { sc.converter.r_load = positive(); }},
        {"converter.dt", [&] { sc.converter.dt = positive(); }},
        {"converter.d_min", [&] { sc.converter.d_min = real(); }},
        {"converter.d_max", [&] { sc.converter.d_max = real(); }},
        {"regulator.voltage_bandwidth", [&] { sc.regulator.voltage_bandwidth = positive(); }},
        {"regulator.current_bandwidth", [&] { sc.regulator.current_bandwidth = positive(); }},
        {"controller", [&] { cc.kind = controller(cur->value); }},
        {"cs.n", [&] { cc.cs.n = count(); }},
        {"cs.k_levy", [&] { cc.cs.k_levy = real(); }},
        {"cs.beta", [&] { cc.cs.beta = real(); }},
        {"cs.gamma0", [&] { cc.cs.gamma0 = real(); }},
        {"cs.p_abandon", [&] { cc.cs.p_abandon = real(); }},
        {"cs.space", [&] { cc.cs_space = space(); }},
        {"cs.bounds", [&] { cc.cs_bounds = bounds(); }},
        {"cs.random_init", [&] { cc.cs.random_init = flag(); }},
        {"pso.n", [&] { cc.pso.n = count(); }},
        {"pso.w", [&] { cc.pso.w = real(); }},
        {"pso.alpha1", [&] { cc.pso.alpha1 = real(); }},
        {"pso.alpha2", [&] { cc.pso.alpha2 = real(); }},
        {"pso.space", [&] { cc.pso_space = space(); }},
        {"pso.bounds", [&] { cc.pso_bounds = bounds(); }},
        {"pso.random_init", [&] { cc.pso.random_init = flag(); }},
        {"stop.tolerance", [&] { cc.stop.tolerance = real(); }},
        {"stop.patience", [&] { cc.stop.patience = count(); }},
        {"stop.max_iterations", [&] { cc.stop.max_iterations = count(); }},
        {"stop.restart_threshold", [&] { cc.stop.restart_threshold = real(); }},
        {"po.space", [&] { cc.po_space = space(); }},
        {"po.step_duty", [&] { cc.po_step_duty = positive(); }},
        {"po.step_voltage", [&] { cc.po_step_voltage = positive(); }},
        {"po.bounds", [&] { cc.po_bounds = bounds(); }},
        {"po.start", [&] { cc.po_start = real(); }},
        {"po.dir",
         [&] {
             if (cur->value == "+1" || cur->value == "1") cc.po_dir = 1;
             else if (cur->value == "-1") cc.po_dir = -1;
             else throw fail("'po.dir': expected 1 or -1");
         }},
        {"hybrid.zone",
         [&] {
             const auto v = numbers();
             if (v.size() != 2) throw fail("'hybrid.zone': expected 'v_min v_max'");
             if (!(v[0] <= v[1])) throw fail("'hybrid.zone': v_min must not exceed v_max");
             cc.zone = Zone{v[0], v[1]};
         }},
        {"hybrid.model", [&] { cfg.zone_model_path = base_dir / cur->value; }},
        {"sim.total_time", [&] { sc.total_time = positive(); }},
        {"sim.sample_period", [&] { sc.sample_period = positive(); }},
        {"sim.settle_window", [&] { sc.settle_window = positive(); }},
        {"sim.trace_interval", [&] { sc.trace_interval = positive(); }},
        {"sim.band", [&] { sc.band = positive(); }},
        {"curve.samples",
         [&] {
             cfg.curve_samples = count();
             if (cfg.curve_samples < 100) throw fail("'curve.samples' must be at least 100");
         }},
        {"ann.levels",
         [&] {
             cfg.ann.levels = numbers();
             if (cfg.ann.levels.empty()) throw fail("'ann.levels' is empty");
         }},
        {"ann.hidden", [&] { cfg.ann.hidden = count(); }},
        {"ann.epochs", [&] { cfg.ann.train.epochs = count(); }},
        {"ann.learning_rate", [&] { cfg.ann.train.learning_rate = positive(); }},
        {"ann.momentum", [&] { cfg.ann.train.momentum = real(); }},
        {"ann.optimizer",
         [&] {
             if (cur->value == "adam") cfg.ann.train.optimizer = Optimizer::Adam;
             else if (cur->value == "gd") cfg.ann.train.optimizer = Optimizer::GradientDescent;
             else throw fail("'ann.optimizer': expected adam or gd, got '" + cur->value + "'");
         }},
        {"ann.seed", [&] { cfg.ann.seed = count(); }},
        {"ann.holdout", [&] { cfg.ann.holdout_fraction = real(); }},
        {"ann.split_seed", [&] { cfg.ann.split_seed = count(); }},
        {"ann.sort_inputs", [&] { cfg.ann.sort_inputs = flag(); }},
        {"ann.half_width", [&] { cfg.ann.zone.half_width = positive(); }},
        {"batch.controllers",
         [&] {
             cfg.batch_controllers.clear();
             for (const auto& w : detail::split_words(cur->value)) cfg.batch_controllers.push_back(controller(w));
         }},
        {"batch.threads", [&] { cfg.threads = count(); }},
    };

    std::set<std::string, std::less<>> seen;
    for (const auto& e : text.entries) {
        cur = &e;
        const auto h = handlers.find(e.key);
        if (h == handlers.end()) throw fail("unknown key '" + e.key + "'");
        if (e.key != "shading_step" && !seen.insert(e.key).second) throw fail("duplicate key '" + e.key + "'");
        h->second();
        if (e.key.starts_with("module.")) custom_module = true;
    }

    const double kelvin = temperature_c + 273.15;
    if (!(kelvin > 0)) throw ConfigError(text.source + ": temperature below absolute zero");
    cfg.ann.zone.temperature = kelvin;
    cfg.ann.zone.bypass_drop = sc.bypass_drop;

    const ModuleSpec module = custom_module ? calibrate_module(sheet) : kc200gt();
    sc.modules.assign(n_modules, module);

    auto check_width = [&](const std::vector<double>& g, std::size_t line) {
        if (g.size() != n_modules)
            throw ParseError(text.source, line,
                             "shading lists " + std::to_string(g.size()) + " irradiances for " +
                                 std::to_string(n_modules) + " modules");
        for (double x : g)
            if (!(x >= 0 && x <= 1500)) throw ParseError(text.source, line, "irradiance outside [0, 1500] W/m2");
    };
    sc.shading.clear();
    if (shading0) {
        check_width(*shading0, shading_line);
        sc.shading.push_back({0.0, {*shading0, kelvin}});
    } else {
        sc.shading.push_back({0.0, {std::vector<double>(n_modules, constants::stc_irradiance), kelvin}});
    }
    for (const auto& st : steps) {
        check_width(st.g, st.line);
        if (!(st.t > sc.shading.back().t_start))
            throw ParseError(text.source, st.line, "shading steps must have increasing start times after 0");
        sc.shading.push_back({st.t, {st.g, kelvin}});
    }

    if (load_model && cfg.zone_model_path) cc.zone_model = std::make_shared<const Mlp>(load_mlp_file(*cfg.zone_model_path));
    return cfg;
}

inline Config load_config_file(const std::filesystem::path& path, bool load_model = true) {
    return load_config(read_config_file(path), path.parent_path(), load_model);
}

} // namespace pvmppt
