#pragma once

// Closed-loop scenario engine: PV string + boost converter + MPPT controller.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pvmppt/ann.hpp"
#include "pvmppt/converter.hpp"
#include "pvmppt/error.hpp"
#include "pvmppt/mppt.hpp"
#include "pvmppt/pv_model.hpp"

namespace pvmppt {

enum class ControllerKind { PerturbObserve, Pso, Cuckoo, Hybrid };

inline std::string_view to_string(ControllerKind k) {
    switch (k) {
    case ControllerKind::PerturbObserve: return "po";
    case ControllerKind::Pso: return "pso";
    case ControllerKind::Cuckoo: return "cs";
    case ControllerKind::Hybrid: return "hybrid";
    }
    return "?";
}

inline constexpr std::string_view controller_names = "po, pso, cs, hybrid";

inline ControllerKind parse_controller(std::string_view name) {
    if (name == "po") return ControllerKind::PerturbObserve;
    if (name == "pso") return ControllerKind::Pso;
    if (name == "cs") return ControllerKind::Cuckoo;
    if (name == "hybrid") return ControllerKind::Hybrid;
    throw ConfigError("unknown controller '" + std::string(name) + "' (valid: " + std::string(controller_names) + ")");
}

/// Controller choice and parameters. Unset bounds default to the duty limits
/// or to [5%, 95%] of the nominal string open-circuit voltage.
struct ControllerConfig {
    ControllerKind kind = ControllerKind::Cuckoo;
    CsParams cs{};
    DecisionSpace cs_space = DecisionSpace::Voltage;
    std::optional<Bounds> cs_bounds;
    PsoParams pso{};
    DecisionSpace pso_space = DecisionSpace::Duty;
    std::optional<Bounds> pso_bounds;
    StopRule stop{};

    DecisionSpace po_space = DecisionSpace::Voltage;
    double po_step_duty = 0.005;
    double po_step_voltage = 0.5;
    std::optional<Bounds> po_bounds;
    std::optional<double> po_start;  // defaults to the middle of the bounds
    int po_dir = 1;

    /// Hybrid zone: explicit, or predicted by a network from the shading
    /// applied at t = 0.
    std::optional<Zone> zone;
    std::shared_ptr<const Mlp> zone_model;
};

struct ShadingStep {
    double t_start = 0.0;
    ShadingPattern pattern;
};

struct Scenario {
    std::string name = "scenario";
    std::vector<ModuleSpec> modules;
    double bypass_drop = 0.0;
    std::vector<ShadingStep> shading;  // piecewise constant, first step at t = 0
    ConverterParams converter{};
    VoltageRegulator regulator{};
    ControllerConfig controller{};
    double total_time = 4.0;
    std::optional<double> sample_period;  // defaults depend on the actuation
    std::optional<double> settle_window;
    double trace_interval = 1e-4;
    double band = 0.02;
    std::uint64_t seed = 1;
};

/// How the controller's commands reach the plant.
inline DecisionSpace actuation(const ControllerConfig& c) {
    switch (c.kind) {
    case ControllerKind::Cuckoo: return c.cs_space;
    case ControllerKind::Pso: return c.pso_space;
    case ControllerKind::PerturbObserve: return c.po_space;
    case ControllerKind::Hybrid: return DecisionSpace::Voltage;
    }
    return DecisionSpace::Voltage;
}

struct Timing {
    double sample_period = 0.0;
    double settle_window = 0.0;
};

/// A regulated voltage reference settles in about 10 ms; a raw duty step
/// excites the slow input-capacitor mode and needs roughly 0.2 s.
inline Timing default_timing(DecisionSpace space) {
    return space == DecisionSpace::Voltage ? Timing{0.02, 0.015} : Timing{0.2, 0.2};
}

inline Timing timing(const Scenario& s) {
    const Timing d = default_timing(actuation(s.controller));
    Timing t{s.sample_period.value_or(d.sample_period), s.settle_window.value_or(d.settle_window)};
    if (s.sample_period && !s.settle_window) t.settle_window = std::min(d.settle_window, t.sample_period);
    if (s.settle_window && !s.sample_period) t.sample_period = std::max(d.sample_period, t.settle_window);
    return t;
}

inline double nominal_open_circuit_voltage(const std::vector<ModuleSpec>& modules) {
    double v = 0.0;
    for (const auto& m : modules) v += m.v_oc_stc;
    return v;
}

inline void validate(const Scenario& s) {
    if (s.modules.empty()) throw ConfigError("scenario: no modules");
    for (const auto& m : s.modules) validate(m);
    validate(s.converter);
    if (s.shading.empty()) throw ConfigError("scenario: no shading pattern");
    if (s.shading.front().t_start != 0.0) throw ConfigError("scenario: first shading step must start at t = 0");
    for (std::size_t k = 0; k < s.shading.size(); ++k) {
        validate(s.shading[k].pattern, s.modules.size());
        if (k > 0 && !(s.shading[k].t_start > s.shading[k - 1].t_start))
            throw ConfigError("scenario: shading steps must have increasing start times");
    }
    const Timing tm = timing(s);
    if (!(tm.sample_period >= 10 * s.converter.dt)) throw ConfigError("scenario: sample period must be >= 10 dt");
    if (!(tm.settle_window > 0 && tm.settle_window <= tm.sample_period))
        throw ConfigError("scenario: settle window must lie in (0, sample period]");
    if (!(s.total_time > tm.settle_window)) throw ConfigError("scenario: total time must exceed the settle window");
    if (!(s.trace_interval >= s.converter.dt)) throw ConfigError("scenario: trace interval must be >= dt");
    if (!(s.band > 0 && s.band <= 0.2)) throw ConfigError("scenario: band must lie in (0, 0.2]");
}

struct SimTrace {
    std::vector<double> t, v_in, i_pv, p_pv, v_out, i_out, p_out, duty;

    std::size_t size() const { return t.size(); }

    void push(const PlantState& s, const OperatingPoint& pv, const OperatingPoint& out) {
        t.push_back(s.t);
        v_in.push_back(pv.voltage);
        i_pv.push_back(pv.current);
        p_pv.push_back(pv.power);
        v_out.push_back(out.voltage);
        i_out.push_back(out.current);
        p_out.push_back(out.power);
        duty.push_back(s.duty);
    }

    bool operator==(const SimTrace&) const = default;
};

struct MetricsReport {
    double final_power = 0.0;
    double final_voltage = 0.0;
    double gmpp_power = 0.0;
    double gmpp_voltage = 0.0;
    double tracking_efficiency = 0.0;
    std::optional<double> convergence_time;  // empty when never converged
    double ripple = 0.0;
    bool converged_to_global = false;
    std::size_t evaluations = 0;
    std::optional<Zone> zone;  // hybrid only

    bool operator==(const MetricsReport&) const = default;
};

struct SimResult {
    SimTrace trace;
    MetricsReport metrics;
    std::vector<EvaluationRecord> evaluations;
};

/// Earliest time after which p_pv stays within band * gmpp of gmpp.
inline std::optional<double> convergence_time(const SimTrace& trace, double gmpp, double band) {
    if (!(band > 0 && band <= 0.2)) throw ConfigError("convergence_time: band must lie in (0, 0.2]");
    const double tol = band * gmpp;
    std::size_t k = trace.size();
    while (k > 0 && std::abs(trace.p_pv[k - 1] - gmpp) <= tol) --k;
    if (k == trace.size()) return std::nullopt;
    return trace.t[k];
}

/// Time-averaged PV power over the trace divided by gmpp (trapezoidal).
inline double tracking_efficiency(const SimTrace& trace, double gmpp) {
    if (!(gmpp > 0)) throw ConfigError("tracking_efficiency: gmpp must be positive");
    if (trace.size() < 2) return trace.size() == 1 ? trace.p_pv[0] / gmpp : 0.0;
    double energy = 0.0;
    for (std::size_t k = 1; k < trace.size(); ++k)
        energy += 0.5 * (trace.p_pv[k] + trace.p_pv[k - 1]) * (trace.t[k] - trace.t[k - 1]);
    return energy / (gmpp * (trace.t.back() - trace.t.front()));
}

/// Same ratio against a GMPP that varies along the trace (one value per sample).
inline double tracking_efficiency(const SimTrace& trace, const std::vector<double>& gmpp) {
    if (gmpp.size() != trace.size()) throw ConfigError("tracking_efficiency: one gmpp value per sample required");
    for (double g : gmpp)
        if (!(g > 0)) throw ConfigError("tracking_efficiency: gmpp must be positive");
    if (trace.size() < 2) return trace.size() == 1 ? trace.p_pv[0] / gmpp[0] : 0.0;
    double energy = 0.0, available = 0.0;
    for (std::size_t k = 1; k < trace.size(); ++k) {
        const double dt = trace.t[k] - trace.t[k - 1];
        energy += 0.5 * (trace.p_pv[k] + trace.p_pv[k - 1]) * dt;
        available += 0.5 * (gmpp[k] + gmpp[k - 1]) * dt;
    }
    return energy / available;
}

inline OperatingPoint oracle_gmpp(const std::vector<ModuleSpec>& modules, const ShadingPattern& pattern,
                                  double bypass_drop) {
    return find_gmpp(string_curve(StringModel(modules, pattern, bypass_drop), 1000));
}

inline Zone resolve_zone(const Scenario& s) {
    const double voc = StringModel(s.modules, s.shading.front().pattern, s.bypass_drop).open_circuit_voltage();
    Zone z;
    if (s.controller.zone) z = *s.controller.zone;
    else if (s.controller.zone_model) z = predict_zone(*s.controller.zone_model, s.shading.front().pattern.irradiances).zone;
    else throw ConfigError("hybrid controller needs a zone or a zone model");
    validate(z, voc);
    return z;
}

inline std::unique_ptr<Controller> make_controller(const Scenario& s) {
    const auto& c = s.controller;
    const double voc = nominal_open_circuit_voltage(s.modules);
    const Bounds duty{s.converter.d_min, s.converter.d_max};
    const Bounds volts{0.05 * voc, 0.95 * voc};
    auto default_bounds = [&](DecisionSpace space) { return space == DecisionSpace::Duty ? duty : volts; };
    switch (c.kind) {
    case ControllerKind::Cuckoo: {
        CsParams p = c.cs;
        p.bounds = c.cs_bounds.value_or(default_bounds(c.cs_space));
        return std::make_unique<CuckooController>(p, c.cs_space, s.seed, c.stop);
    }
    case ControllerKind::Pso: {
        PsoParams p = c.pso;
        p.bounds = c.pso_bounds.value_or(default_bounds(c.pso_space));
        return std::make_unique<SwarmController>(p, c.pso_space, s.seed, c.stop);
    }
    case ControllerKind::PerturbObserve: {
        PoParams p;
        p.step = c.po_space == DecisionSpace::Duty ? c.po_step_duty : c.po_step_voltage;
        p.bounds = c.po_bounds.value_or(default_bounds(c.po_space));
        return std::make_unique<PerturbObserveController>(p, c.po_space, c.po_start.value_or(p.bounds.mid()),
                                                          c.po_dir);
    }
    case ControllerKind::Hybrid: {
        const Zone z = resolve_zone(s);
        return std::make_unique<HybridController>(z, PoParams{c.po_step_voltage, Bounds{z.v_min, z.v_max}});
    }
    }
    throw ConfigError("unknown controller kind");
}

/// Runs the closed loop. At every sample instant the controller's command is
/// applied and held; the PV power averaged over the last 20% of the settle
/// window is fed back as the evaluation of that command.
inline SimResult run(const Scenario& s) {
    validate(s);
    const auto& cp = s.converter;
    const auto steps = [&](double seconds) { return static_cast<std::size_t>(std::llround(seconds / cp.dt)); };
    const std::size_t total_steps = steps(s.total_time);
    const Timing tm = timing(s);
    const std::size_t sample_steps = steps(tm.sample_period);
    const std::size_t settle_steps = steps(tm.settle_window);
    const std::size_t window_start = settle_steps - std::max<std::size_t>(1, steps(0.2 * tm.settle_window));
    const std::size_t trace_steps = std::max<std::size_t>(1, steps(s.trace_interval));

    std::size_t segment = 0;
    auto model_for = [&](std::size_t k) { return StringModel(s.modules, s.shading[k].pattern, s.bypass_drop); };
    PvTable table(model_for(0));

    auto controller = make_controller(s);
    SimResult result;
    if (s.controller.kind == ControllerKind::Hybrid) {
        const auto* h = static_cast<const HybridController*>(controller.get());
        result.metrics.zone = h->zone();
    }

    PlantState state;
    state.v_in = table.open_circuit_voltage();
    state.v_out = table.open_circuit_voltage();
    state.duty = cp.d_min;

    auto record = [&] { result.trace.push(state, measure(state, table), output_of(state, cp)); };
    record();

    Command cmd = controller->first();
    double acc_v = 0.0, acc_i = 0.0, acc_p = 0.0;
    std::size_t acc_n = 0;
    for (std::size_t n = 0; n < total_steps; ++n) {
        const std::size_t phase = n % sample_steps;
        if (phase == 0 && n > 0) {
            const double k = static_cast<double>(acc_n);
            cmd = controller->next({acc_v / k, acc_i / k, acc_p / k, state.t});
            ++result.metrics.evaluations;
            acc_v = acc_i = acc_p = 0.0;
            acc_n = 0;
        }
        while (segment + 1 < s.shading.size() && state.t + 0.5 * cp.dt >= s.shading[segment + 1].t_start)
            table = PvTable(model_for(++segment));

        double duty = 0.0;
        if (cmd.space == DecisionSpace::Duty) {
            duty = std::clamp(cmd.value, cp.d_min, cp.d_max);
        } else {
            duty = s.regulator.duty(state, table.current_at(state.v_in), cmd.value, cp);
        }
        try {
            state = plant_step(state, cp, duty, table);
        } catch (const InstabilityError&) {
            throw;
        } catch (const Error& e) {
            throw Error(std::string(e.what()) + " at t=" + std::to_string(state.t) + " s");
        }

        const std::size_t done = phase + 1;
        if (done > window_start && done <= settle_steps) {
            const auto pv = measure(state, table);
            acc_v += pv.voltage;
            acc_i += pv.current;
            acc_p += pv.power;
            ++acc_n;
        }
        if ((n + 1) % trace_steps == 0) record();
    }

    const auto gmpp = oracle_gmpp(s.modules, s.shading.back().pattern, s.bypass_drop);
    auto& m = result.metrics;
    m.gmpp_power = gmpp.power;
    m.gmpp_voltage = gmpp.voltage;
    if (s.shading.size() == 1) {
        m.tracking_efficiency = tracking_efficiency(result.trace, gmpp.power);
    } else {
        std::vector<double> segment_gmpp;
        for (const auto& step : s.shading) segment_gmpp.push_back(oracle_gmpp(s.modules, step.pattern, s.bypass_drop).power);
        std::vector<double> available(result.trace.size());
        std::size_t seg = 0;
        for (std::size_t k = 0; k < available.size(); ++k) {
            while (seg + 1 < s.shading.size() && result.trace.t[k] + 0.5 * cp.dt >= s.shading[seg + 1].t_start) ++seg;
            available[k] = segment_gmpp[seg];
        }
        m.tracking_efficiency = tracking_efficiency(result.trace, available);
    }
    m.convergence_time = convergence_time(result.trace, gmpp.power, s.band);

    // Steady-state figures over the final 5% of the run (at least one sample period).
    const double tail = std::max(tm.sample_period, 0.05 * s.total_time);
    const double t_end = result.trace.t.back();
    double sum_p = 0.0, sum_v = 0.0, p_lo = INFINITY, p_hi = -INFINITY;
    std::size_t count = 0;
    for (std::size_t k = 0; k < result.trace.size(); ++k) {
        if (result.trace.t[k] < t_end - tail) continue;
        const double p = result.trace.p_pv[k];
        sum_p += p;
        sum_v += result.trace.v_in[k];
        p_lo = std::min(p_lo, p);
        p_hi = std::max(p_hi, p);
        ++count;
    }
    m.final_power = sum_p / static_cast<double>(count);
    m.final_voltage = sum_v / static_cast<double>(count);
    m.ripple = m.final_power > 0 ? (p_hi - p_lo) / m.final_power : 0.0;
    m.converged_to_global = std::abs(m.final_power - gmpp.power) <= s.band * gmpp.power;
    result.evaluations = controller->log();
    return result;
}

// ---------------------------------------------------------------------------
// Batch execution

struct BatchJob {
    std::string key;
    Scenario scenario;
};

struct BatchRow {
    std::string key;
    std::string scenario;
    std::string controller;
    std::uint64_t seed = 0;
    std::optional<MetricsReport> metrics;
    std::string error;  // empty on success
};

/// Runs every job on up to `threads` workers (0 = hardware concurrency).
/// Rows come back in job order whatever the scheduling.
inline std::vector<BatchRow> run_batch(const std::vector<BatchJob>& jobs, unsigned threads = 0) {
    std::vector<BatchRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < jobs.size(); k = next++) {
            const auto& job = jobs[k];
            BatchRow& row = rows[k];
            row.key = job.key;
            row.scenario = job.scenario.name;
            row.controller = std::string(to_string(job.scenario.controller.kind));
            row.seed = job.scenario.seed;
            try {
                row.metrics = run(job.scenario).metrics;
            } catch (const std::exception& e) {
                row.error = e.what();
            }
        }
    };
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs.size(), 1)));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return rows;
}

/// Fraction of paired seeds where `better` beats `worse`.
struct PairedStat {
    std::string name;
    std::size_t wins = 0;
    std::size_t total = 0;
    double rate() const { return total ? static_cast<double>(wins) / static_cast<double>(total) : 0.0; }
};

/// Convergence-time comparison; a run that never converged loses to one that did.
inline bool faster(const MetricsReport& a, const MetricsReport& b) {
    if (!a.convergence_time) return false;
    if (!b.convergence_time) return true;
    return *a.convergence_time < *b.convergence_time;
}

/// Paired comparisons over a batch. Rows are paired by scenario and seed;
/// a pair counts only when both runs finished. Controllers are compared in
/// the order hybrid, cs, pso, po: convergence time (earlier is faster) and
/// tracking efficiency (higher wins), plus the full hybrid < cs < pso chain.
inline std::vector<PairedStat> paired_stats(const std::vector<BatchRow>& rows) {
    using Key = std::pair<std::string, std::uint64_t>;
    std::map<Key, std::map<std::string, const MetricsReport*>> runs;
    std::set<std::string> present;
    for (const auto& r : rows) {
        present.insert(r.controller);
        auto& slot = runs[{r.scenario, r.seed}][r.controller];
        slot = r.metrics ? &*r.metrics : nullptr;
    }
    const std::vector<std::string> order{"hybrid", "cs", "pso", "po"};
    std::vector<PairedStat> out;
    auto tally = [&](const std::string& name, const std::vector<std::string>& who, auto&& wins) {
        PairedStat st{name, 0, 0};
        for (const auto& [key, by] : runs) {
            std::vector<const MetricsReport*> m;
            for (const auto& c : who) {
                const auto it = by.find(c);
                m.push_back(it == by.end() ? nullptr : it->second);
            }
            if (std::find(m.begin(), m.end(), nullptr) != m.end()) continue;
            ++st.total;
            if (wins(m)) ++st.wins;
        }
        out.push_back(st);
    };
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            if (!present.contains(order[i]) || !present.contains(order[j])) continue;
            tally("time:" + order[i] + "<" + order[j], {order[i], order[j]},
                  [](const auto& m) { return faster(*m[0], *m[1]); });
            tally("efficiency:" + order[i] + ">" + order[j], {order[i], order[j]},
                  [](const auto& m) { return m[0]->tracking_efficiency > m[1]->tracking_efficiency; });
        }
    if (present.contains("hybrid") && present.contains("cs") && present.contains("pso"))
        tally("time:hybrid<cs<pso", {"hybrid", "cs", "pso"},
              [](const auto& m) { return faster(*m[0], *m[1]) && faster(*m[1], *m[2]); });
    return out;
}

} // namespace pvmppt
