#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pvmppt/sim.hpp"

using namespace pvmppt;

namespace {

constexpr double stc_t = 298.15;

Scenario shaded_scenario(ControllerKind kind, double total_time = 1.5) {
    Scenario s;
    s.name = "shaded";
    s.modules = {kc200gt(), kc200gt(), kc200gt()};
    s.shading = {{0.0, {{600, 800, 1000}, stc_t}}};
    s.controller.kind = kind;
    s.controller.zone = Zone{79.99, 88.0};
    s.controller.po_start = 10.0;
    s.total_time = total_time;
    return s;
}

SimTrace flat_trace(double p, std::size_t n, double dt = 0.01) {
    SimTrace tr;
    for (std::size_t k = 0; k < n; ++k) {
        tr.t.push_back(dt * static_cast<double>(k));
        tr.p_pv.push_back(p);
    }
    return tr;
}

/// Mean PV power over the last fifth of a window of `settle` seconds after
/// the command changes from `from` to `to`.
double window_power(const StringModel& model, DecisionSpace space, double from, double to, double settle) {
    const PvTable pv(model);
    const ConverterParams cp;
    const VoltageRegulator reg;
    PlantState s{pv.open_circuit_voltage(), 0, pv.open_circuit_voltage(), 0, cp.d_min};
    auto step = [&](double cmd) {
        const double d = space == DecisionSpace::Duty ? cmd : reg.duty(s, pv.current_at(s.v_in), cmd, cp);
        s = plant_step(s, cp, d, pv);
    };
    const auto n_pre = static_cast<long>(std::lround(0.6 / cp.dt));
    for (long k = 0; k < n_pre; ++k) step(from);
    const auto n = static_cast<long>(std::lround(settle / cp.dt));
    const auto start = n - std::max(1L, static_cast<long>(std::lround(0.2 * settle / cp.dt)));
    double sum = 0;
    long count = 0;
    for (long k = 0; k < n; ++k) {
        step(to);
        if (k + 1 > start) {
            sum += measure(s, pv).power;
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

BatchRow row(std::string controller, std::uint64_t seed, std::optional<double> t, double eff,
             std::string scenario = "s") {
    BatchRow r;
    r.key = scenario + "/" + controller + "/" + std::to_string(seed);
    r.scenario = std::move(scenario);
    r.controller = std::move(controller);
    r.seed = seed;
    MetricsReport m;
    m.convergence_time = t;
    m.tracking_efficiency = eff;
    r.metrics = m;
    return r;
}

const PairedStat& stat(const std::vector<PairedStat>& v, const std::string& name) {
    for (const auto& s : v)
        if (s.name == name) return s;
    throw std::runtime_error("missing " + name);
}

} // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(ConvergenceTime, ConstantAtOptimumConvergesImmediately) {
    const auto tr = flat_trace(400, 100);
    EXPECT_EQ(convergence_time(tr, 400, 0.02), 0.0);
}

TEST(ConvergenceTime, EntryAfterLastExcursion) {
    auto tr = flat_trace(400, 100);
    tr.p_pv[10] = 300;
    tr.p_pv[40] = 380;  // 5 % low, outside a 2 % band
    EXPECT_DOUBLE_EQ(*convergence_time(tr, 400, 0.02), tr.t[41]);
    EXPECT_DOUBLE_EQ(*convergence_time(tr, 400, 0.06), tr.t[11]);
}

TEST(ConvergenceTime, NeverConvergesWhenLastSampleOutside) {
    auto tr = flat_trace(400, 10);
    tr.p_pv.back() = 100;
    EXPECT_FALSE(convergence_time(tr, 400, 0.02).has_value());
}

TEST(ConvergenceTime, BandValidated) {
    const auto tr = flat_trace(400, 10);
    EXPECT_THROW(convergence_time(tr, 400, 0.0), ConfigError);
    EXPECT_THROW(convergence_time(tr, 400, 0.3), ConfigError);
}

TEST(TrackingEfficiency, ConstantPower) {
    EXPECT_NEAR(tracking_efficiency(flat_trace(400, 50), 400), 1.0, 1e-12);
    EXPECT_NEAR(tracking_efficiency(flat_trace(200, 50), 400), 0.5, 1e-12);
}

TEST(TrackingEfficiency, PerSampleReference) {
    auto tr = flat_trace(100, 3, 1.0);
    tr.p_pv = {100, 100, 200};
    EXPECT_DOUBLE_EQ(tracking_efficiency(tr, std::vector<double>{100, 100, 200}), 1.0);
    EXPECT_THROW(tracking_efficiency(tr, std::vector<double>{100}), ConfigError);
    EXPECT_THROW(tracking_efficiency(tr, 0.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Timing

TEST(Timing, DefaultsFollowActuation) {
    auto s = shaded_scenario(ControllerKind::Cuckoo);
    EXPECT_EQ(actuation(s.controller), DecisionSpace::Voltage);
    EXPECT_EQ(timing(s).sample_period, 0.02);
    EXPECT_EQ(timing(s).settle_window, 0.015);
    s.controller.kind = ControllerKind::Pso;
    EXPECT_EQ(actuation(s.controller), DecisionSpace::Duty);
    EXPECT_EQ(timing(s).sample_period, 0.2);
    EXPECT_EQ(timing(s).settle_window, 0.2);
}

TEST(Timing, PartialOverridesStayConsistent) {
    auto s = shaded_scenario(ControllerKind::Cuckoo);
    s.sample_period = 0.01;
    EXPECT_EQ(timing(s).settle_window, 0.01);
    s.sample_period.reset();
    s.settle_window = 0.05;
    EXPECT_EQ(timing(s).sample_period, 0.05);
}

TEST(Timing, SettleWindowLongEnough) {
    const StringModel model({kc200gt(), kc200gt(), kc200gt()}, {{600, 800, 1000}, stc_t});
    // Regulated voltage steps across the operating range.
    const auto v = default_timing(DecisionSpace::Voltage).settle_window;
    for (auto [a, b] : std::vector<std::pair<double, double>>{{20, 83}, {83, 20}, {40, 60}, {90, 30}}) {
        const double p1 = window_power(model, DecisionSpace::Voltage, a, b, v);
        const double p2 = window_power(model, DecisionSpace::Voltage, a, b, 2 * v);
        EXPECT_LE(std::abs(p1 - p2), 0.01 * p2) << a << " -> " << b;
    }
    // Raw duty steps up to D = 0.8.
    const auto d = default_timing(DecisionSpace::Duty).settle_window;
    for (auto [a, b] : std::vector<std::pair<double, double>>{{0.05, 0.8}, {0.8, 0.05}, {0.3, 0.5}, {0.6, 0.2}}) {
        const double p1 = window_power(model, DecisionSpace::Duty, a, b, d);
        const double p2 = window_power(model, DecisionSpace::Duty, a, b, 2 * d);
        EXPECT_LE(std::abs(p1 - p2), 0.01 * p2) << a << " -> " << b;
    }
}

// ---------------------------------------------------------------------------
// Scenario validation

TEST(Scenario, Validation) {
    auto s = shaded_scenario(ControllerKind::Cuckoo);
    EXPECT_NO_THROW(validate(s));
    auto bad = s;
    bad.modules.clear();
    EXPECT_THROW(validate(bad), ConfigError);
    bad = s;
    bad.shading.front().t_start = 0.5;
    EXPECT_THROW(validate(bad), ConfigError);
    bad = s;
    bad.shading.push_back({0.0, {{1000, 1000, 1000}, stc_t}});
    EXPECT_THROW(validate(bad), ConfigError);
    bad = s;
    bad.shading.front().pattern.irradiances = {1000, 1000};
    EXPECT_THROW(validate(bad), ConfigError);
    bad = s;
    bad.sample_period = 1e-5;
    EXPECT_THROW(validate(bad), ConfigError);
    bad = s;
    bad.sample_period = 0.02;
    bad.settle_window = 0.03;
    EXPECT_THROW(validate(bad), ConfigError);
    bad = s;
    bad.band = 0.5;
    EXPECT_THROW(validate(bad), ConfigError);
    bad = s;
    bad.total_time = 0.01;
    EXPECT_THROW(validate(bad), ConfigError);
}

TEST(Scenario, HybridNeedsZone) {
    auto s = shaded_scenario(ControllerKind::Hybrid);
    s.controller.zone.reset();
    EXPECT_THROW(run(s), ConfigError);
    s.controller.zone = Zone{90, 120};
    EXPECT_THROW(run(s), ConfigError);
}

TEST(Scenario, ControllerNames) {
    EXPECT_EQ(parse_controller("cs"), ControllerKind::Cuckoo);
    EXPECT_EQ(parse_controller("pso"), ControllerKind::Pso);
    EXPECT_EQ(parse_controller("po"), ControllerKind::PerturbObserve);
    EXPECT_EQ(parse_controller("hybrid"), ControllerKind::Hybrid);
    EXPECT_THROW(parse_controller("ga"), ConfigError);
}

// ---------------------------------------------------------------------------
// Closed loop

TEST(Run, DeterministicForSeed) {
    const auto s = shaded_scenario(ControllerKind::Cuckoo, 0.6);
    const auto a = run(s);
    const auto b = run(s);
    EXPECT_TRUE(a.trace == b.trace);
    EXPECT_TRUE(a.metrics == b.metrics);
}

TEST(Run, NeverBeatsOracle) {
    for (auto kind : {ControllerKind::Cuckoo, ControllerKind::Hybrid, ControllerKind::PerturbObserve}) {
        const auto r = run(shaded_scenario(kind, 1.0));
        for (double p : r.trace.p_pv) ASSERT_LE(p, r.metrics.gmpp_power * (1 + 1e-3));
        EXPECT_LE(r.metrics.tracking_efficiency, 1.0);
    }
}

TEST(Run, TraceAndMetricsConsistent) {
    const auto s = shaded_scenario(ControllerKind::Hybrid, 1.0);
    const auto r = run(s);
    const auto& tr = r.trace;
    ASSERT_EQ(tr.size(), 1 + static_cast<std::size_t>(std::lround(s.total_time / s.trace_interval)));
    for (std::size_t k = 0; k < tr.size(); ++k) {
        EXPECT_NEAR(tr.p_pv[k], tr.v_in[k] * tr.i_pv[k], 1e-9 * (1 + tr.p_pv[k]));
        EXPECT_NEAR(tr.p_out[k], tr.v_out[k] * tr.i_out[k], 1e-9 * (1 + tr.p_out[k]));
        EXPECT_GE(tr.duty[k], s.converter.d_min);
        EXPECT_LE(tr.duty[k], s.converter.d_max);
    }
    const auto& m = r.metrics;
    EXPECT_NEAR(m.gmpp_power, 397.6, 0.5);
    EXPECT_EQ(m.evaluations, r.evaluations.size());
    EXPECT_EQ(m.tracking_efficiency, tracking_efficiency(tr, m.gmpp_power));
    EXPECT_EQ(m.convergence_time, convergence_time(tr, m.gmpp_power, s.band));
    EXPECT_EQ(m.converged_to_global, std::abs(m.final_power - m.gmpp_power) <= s.band * m.gmpp_power);
    ASSERT_TRUE(m.zone.has_value());
    EXPECT_EQ(m.zone->v_min, 79.99);
}

TEST(Run, HybridReachesGlobalPeak) {
    const auto r = run(shaded_scenario(ControllerKind::Hybrid, 1.0));
    EXPECT_TRUE(r.metrics.converged_to_global);
    EXPECT_LT(*r.metrics.convergence_time, 0.2);
}

TEST(Run, PerturbObserveFromLowVoltageStaysLocal) {
    const auto r = run(shaded_scenario(ControllerKind::PerturbObserve, 2.0));
    EXPECT_FALSE(r.metrics.converged_to_global);
    EXPECT_LT(r.metrics.final_voltage, 40);
}

TEST(Run, CuckooRestartsAfterShadingStep) {
    auto s = shaded_scenario(ControllerKind::Cuckoo, 6.0);
    s.shading = {{0.0, {{1000, 1000, 1000}, stc_t}}, {3.0, {{600, 800, 1000}, stc_t}}};
    const auto r = run(s);
    EXPECT_TRUE(r.metrics.converged_to_global);
    EXPECT_NEAR(r.metrics.gmpp_power, 397.6, 0.5);
    EXPECT_GT(*r.metrics.convergence_time, 3.0);
    EXPECT_GT(r.metrics.tracking_efficiency, 0.8);
    EXPECT_LE(r.metrics.tracking_efficiency, 1.0);
}

// ---------------------------------------------------------------------------
// Batch

TEST(Batch, RowsComeBackInJobOrder) {
    std::vector<BatchJob> jobs;
    for (auto kind : {ControllerKind::PerturbObserve, ControllerKind::Hybrid})
        for (std::uint64_t seed : {3, 1, 2}) {
            auto s = shaded_scenario(kind, 0.3);
            s.seed = seed;
            jobs.push_back({std::string(to_string(kind)) + std::to_string(seed), s});
        }
    auto bad = shaded_scenario(ControllerKind::Hybrid, 0.3);
    bad.controller.zone = Zone{90, 200};
    jobs.push_back({"bad", bad});

    const auto rows = run_batch(jobs, 4);
    ASSERT_EQ(rows.size(), jobs.size());
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        EXPECT_EQ(rows[k].key, jobs[k].key);
        EXPECT_EQ(rows[k].seed, jobs[k].scenario.seed);
    }
    EXPECT_FALSE(rows.back().metrics.has_value());
    EXPECT_FALSE(rows.back().error.empty());
    const auto serial = run_batch(jobs, 1);
    for (std::size_t k = 0; k + 1 < jobs.size(); ++k) EXPECT_TRUE(*rows[k].metrics == *serial[k].metrics);
}

TEST(PairedStats, CountsOnlyCompletePairs) {
    std::vector<BatchRow> rows{
        row("hybrid", 1, 0.1, 0.9), row("cs", 1, 0.5, 0.8), row("pso", 1, 2.0, 0.7),
        row("hybrid", 2, 0.6, 0.9), row("cs", 2, 0.5, 0.95), row("pso", 2, std::nullopt, 0.5),
        row("hybrid", 3, 0.1, 0.9),  // no partner for seed 3
    };
    BatchRow failed = row("pso", 3, 1.0, 0.9);
    failed.metrics.reset();
    rows.push_back(failed);

    const auto st = paired_stats(rows);
    EXPECT_EQ(stat(st, "time:hybrid<cs").total, 2u);
    EXPECT_EQ(stat(st, "time:hybrid<cs").wins, 1u);
    EXPECT_EQ(stat(st, "time:cs<pso").wins, 2u);  // never converging loses
    EXPECT_EQ(stat(st, "efficiency:cs>pso").wins, 2u);
    EXPECT_EQ(stat(st, "efficiency:hybrid>cs").wins, 1u);
    EXPECT_EQ(stat(st, "time:hybrid<cs<pso").total, 2u);
    EXPECT_EQ(stat(st, "time:hybrid<cs<pso").wins, 1u);
    EXPECT_DOUBLE_EQ(stat(st, "time:hybrid<cs<pso").rate(), 0.5);
    for (const auto& s : st) EXPECT_EQ(s.name.find("po"), std::string::npos);
}

TEST(PairedStats, PairsWithinScenarioOnly) {
    const std::vector<BatchRow> rows{row("cs", 1, 0.5, 0.9, "a"), row("pso", 1, 1.0, 0.8, "b")};
    EXPECT_EQ(stat(paired_stats(rows), "time:cs<pso").total, 0u);
}
