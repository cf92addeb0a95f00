#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "pvmppt/pv_model.hpp"

using namespace pvmppt;

namespace {

constexpr double stc_t = 298.15;

// Plain bisection on the implicit single-diode equation, built from the spec
// fields without touching the library's solver.
double oracle_current(const ModuleSpec& m, double g, double t, double v) {
    const double a = m.ideality * m.n_cells * 1.380649e-23 * t / 1.602176634e-19;
    const double gsh = std::isinf(m.r_shunt) ? 0.0 : 1.0 / m.r_shunt;
    const double iph = (m.i_sc_stc * (1 + m.r_series * gsh) + m.k_i * (t - stc_t)) * g / 1000.0;
    const double voc = m.v_oc_stc + m.k_v * (t - stc_t);
    const double iph_stc = (m.i_sc_stc * (1 + m.r_series * gsh) + m.k_i * (t - stc_t));
    const double i0 = (iph_stc - voc * gsh) / std::expm1(voc / a);
    auto f = [&](double i) {
        const double vd = v + i * m.r_series;
        return iph - i0 * std::expm1(vd / a) - vd * gsh - i;
    };
    double lo = -50.0, hi = iph + 1.0;
    for (int k = 0; k < 200; ++k) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double oracle_module_voltage(const ModuleSpec& m, double g, double t, double i, double vb) {
    // Module current falls with voltage; find v in [-vb, 60] where current equals i.
    double lo = -vb, hi = 60.0;
    if (oracle_current(m, g, t, lo) <= i) return -vb;
    for (int k = 0; k < 100; ++k) {
        const double mid = 0.5 * (lo + hi);
        (oracle_current(m, g, t, mid) > i ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double oracle_string_current(const std::vector<ModuleSpec>& ms, const ShadingPattern& p, double v, double vb) {
    double lo = 0.0, hi = 0.0;
    for (std::size_t k = 0; k < ms.size(); ++k) hi = std::max(hi, ms[k].i_sc_stc * p.irradiances[k] / 1000.0 * 1.2 + 0.01);
    auto vs = [&](double i) {
        double s = 0.0;
        for (std::size_t k = 0; k < ms.size(); ++k) s += oracle_module_voltage(ms[k], p.irradiances[k], p.temperature, i, vb);
        return s;
    };
    for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (vs(mid) > v ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<ModuleSpec> three() {
    const auto m = kc200gt();
    return {m, m, m};
}

} // namespace

TEST(ModuleCurrent, ShortCircuitMatchesDatasheet) {
    const auto m = kc200gt();
    EXPECT_NEAR(module_current(m, 1000, stc_t, 0.0), m.i_sc_stc, 0.005 * m.i_sc_stc);
}

TEST(ModuleCurrent, OpenCircuitIsZero) {
    const auto m = kc200gt();
    EXPECT_NEAR(module_current(m, 1000, stc_t, m.v_oc_stc), 0.0, 0.01);
}

TEST(ModuleCurrent, HalfIrradianceHalvesShortCircuit) {
    const auto m = kc200gt();
    const double full = oracle_current(m, 1000, stc_t, 0.0);
    const double half = oracle_current(m, 500, stc_t, 0.0);
    EXPECT_NEAR(module_current(m, 500, stc_t, 0.0), half, 1e-8);
    EXPECT_NEAR(half / full, 0.5, 2e-3);
}

TEST(ModuleCurrent, AgreesWithBisectionOracle) {
    const auto m = kc200gt();
    for (double g : {0.0, 150.0, 600.0, 1000.0, 1300.0})
        for (double t : {273.15, 298.15, 340.0})
            for (double v = 0.0; v <= 34.0; v += 1.7)
                EXPECT_NEAR(module_current(m, g, t, v), oracle_current(m, g, t, v), 1e-8)
                    << "g=" << g << " t=" << t << " v=" << v;
}

TEST(ModuleCurrent, NegativeIrradianceRejected) {
    EXPECT_THROW(module_current(kc200gt(), -1.0, stc_t, 0.0), ConfigError);
}

TEST(Calibration, DatasheetPowerWithinOnePercent) {
    const auto m = kc200gt();
    const double target = 26.3 * 7.61;
    const auto mpp = module_mpp(m, 1000, stc_t);
    EXPECT_LT(std::abs(mpp.power - target) / target, 0.01);
    // Independent sweep of the oracle current.
    double best = 0.0;
    for (double v = 0.0; v <= 33.0; v += 0.001) best = std::max(best, v * oracle_current(m, 1000, stc_t, v));
    EXPECT_LT(std::abs(best - target) / target, 0.01);
    EXPECT_GT(m.r_series, 0.0);
    EXPECT_GT(m.r_shunt, m.r_series);
}

TEST(Calibration, DegenerateDatasheetRejected) {
    Datasheet d;
    d.v_mp = d.v_oc;
    EXPECT_THROW(calibrate_module(d), ConfigError);
    d = Datasheet{};
    d.i_mp = d.i_sc + 1;
    EXPECT_THROW(calibrate_module(d), ConfigError);
}

TEST(Calibration, LosslessModuleReachesDatasheetPower) {
    Datasheet d;
    d.lossless = true;
    const auto m = calibrate_module(d);
    EXPECT_EQ(m.r_series, 0.0);
    EXPECT_TRUE(std::isinf(m.r_shunt));
    double best = 0.0;
    for (double v = 0.0; v <= 33.0; v += 0.001) best = std::max(best, v * oracle_current(m, 1000, stc_t, v));
    EXPECT_GE(best, d.v_mp * d.i_mp);
}

TEST(Calibration, InfeasibleDatasheetRaises) {
    Datasheet d;
    d.i_mp = 8.2;  // near-rectangular curve no single diode of this ideality can produce
    d.v_mp = 32.0;
    EXPECT_THROW(calibrate_module(d), CalibrationError);
}

TEST(ModuleSpecValidation, RejectsBrokenInvariants) {
    auto m = kc200gt();
    m.ideality = 2.5;
    EXPECT_THROW(validate(m), ConfigError);
    m = kc200gt();
    m.r_shunt = m.r_series;
    EXPECT_THROW(validate(m), ConfigError);
    m = kc200gt();
    m.r_series = -0.1;
    EXPECT_THROW(validate(m), ConfigError);
}

TEST(ShadingValidation, RejectsOutOfRange) {
    EXPECT_THROW(validate(ShadingPattern{{1000, 2000, 1000}, stc_t}, 3), ConfigError);
    EXPECT_THROW(validate(ShadingPattern{{1000, 1000}, stc_t}, 3), ConfigError);
    EXPECT_THROW(validate(ShadingPattern{{1000, 1000, 1000}, 200.0}, 3), ConfigError);
    EXPECT_NO_THROW(validate(ShadingPattern{{0, 1500, 700}, 233.0}, 3));
}

TEST(StringCurve, UniformIrradianceHasOnePeak) {
    const auto c = string_curve(three(), {{1000, 1000, 1000}, stc_t}, 1000);
    EXPECT_EQ(c.peaks.size(), 1u);
    const auto g = find_gmpp(c);
    EXPECT_NEAR(g.voltage, 3 * 26.3, 0.03 * 3 * 26.3);
}

TEST(StringCurve, ShadedPatternHasThreePeaks) {
    const auto c = string_curve(three(), {{600, 800, 1000}, stc_t}, 1000);
    ASSERT_EQ(c.peaks.size(), 3u);
    const auto g = find_gmpp(c);
    EXPECT_NEAR(g.power, 400.0, 20.0);
    EXPECT_GT(g.voltage, c.peaks[1].voltage);
}

TEST(StringCurve, TwoLevelPatternHasTwoPeaks) {
    const auto c = string_curve(three(), {{1000, 1000, 200}, stc_t}, 1000);
    EXPECT_EQ(c.peaks.size(), 2u);
}

TEST(StringCurve, AgreesWithBruteForceOracle) {
    const auto ms = three();
    const ShadingPattern p{{600, 800, 1000}, stc_t};
    const auto c = string_curve(ms, p, 200);
    for (std::size_t k = 0; k < c.points.size(); k += 17)
        EXPECT_NEAR(c.points[k].current, oracle_string_current(ms, p, c.points[k].voltage, 0.0), 1e-6)
            << "v=" << c.points[k].voltage;
}

TEST(StringCurve, BypassDropShiftsShadedBranch) {
    const auto ms = three();
    const ShadingPattern p{{600, 800, 1000}, stc_t};
    const StringModel ideal(ms, p, 0.0), real(ms, p, 0.6);
    const double i = 7.0;  // only the 1000 W/m2 module conducts
    EXPECT_NEAR(ideal.voltage_at(i) - real.voltage_at(i), 1.2, 1e-9);
    const auto c = string_curve(ms, p, 400, 0.6);
    for (std::size_t k = 0; k < c.points.size(); k += 37)
        EXPECT_NEAR(c.points[k].current, oracle_string_current(ms, p, c.points[k].voltage, 0.6), 1e-6);
}

TEST(StringCurve, RejectsTooFewSamples) {
    EXPECT_THROW(string_curve(three(), {{1000, 1000, 1000}, stc_t}, 50), ConfigError);
}

TEST(StringCurve, EmptyStringRejected) {
    EXPECT_THROW(StringModel({}, {{}, stc_t}), ConfigError);
}

TEST(StringCurve, CurveShapeInvariants) {
    const auto c = string_curve(three(), {{300, 900, 650}, 310.0}, 500);
    for (std::size_t k = 1; k < c.points.size(); ++k) {
        EXPECT_GT(c.points[k].voltage, c.points[k - 1].voltage);
        EXPECT_LE(c.points[k].current, c.points[k - 1].current + 1e-12);
        EXPECT_GE(c.points[k].power, 0.0);
    }
    EXPECT_EQ(c.points.front().voltage, 0.0);
    EXPECT_NEAR(c.points.back().voltage, c.source->open_circuit_voltage(), 1e-12);
}

TEST(StringCurve, DarkModuleIsBypassed) {
    const auto c = string_curve(three(), {{0, 1000, 1000}, stc_t}, 1000);
    ASSERT_EQ(c.peaks.size(), 1u);
    EXPECT_NEAR(find_gmpp(c).voltage, 2 * 26.3, 0.03 * 2 * 26.3);
}

TEST(FindGmpp, SingleModuleEqualsModuleMaximum) {
    const auto m = kc200gt();
    for (double g : {250.0, 700.0, 1000.0}) {
        const auto c = string_curve({m}, {{g}, stc_t}, 400);
        const auto ref = module_mpp(m, g, stc_t);
        EXPECT_NEAR(find_gmpp(c).power, ref.power, 1e-6 * ref.power);
    }
}

TEST(FindGmpp, RefinedVoltageBeatsEverySample) {
    const auto c = string_curve(three(), {{600, 800, 1000}, stc_t}, 300);
    const auto g = find_gmpp(c);
    for (const auto& p : c.points) EXPECT_GE(g.power, p.power - 1e-9);
    for (const auto& pk : c.peaks) EXPECT_GE(g.power, pk.power - 1e-9);
}

TEST(FindGmpp, EmptyCurveRejected) { EXPECT_THROW(find_gmpp(PVCurve{}), ConfigError); }

TEST(FindGmpp, WithoutSourceUsesInterpolation) {
    auto c = string_curve(three(), {{600, 800, 1000}, stc_t}, 1000);
    const auto exact = find_gmpp(c);
    c.source.reset();
    const auto approx = find_gmpp(c);
    EXPECT_NEAR(approx.power, exact.power, 1e-3 * exact.power);
}

TEST(StringProperties, PeakCountBoundedByDistinctLevels) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> level(0, 10);
    std::uniform_int_distribution<int> size(1, 4);
    const auto m = kc200gt();
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = size(rng);
        ShadingPattern p{{}, stc_t};
        for (int k = 0; k < n; ++k) p.irradiances.push_back(100.0 * level(rng));
        const std::set<double> distinct(p.irradiances.begin(), p.irradiances.end());
        const auto c = string_curve(std::vector<ModuleSpec>(n, m), p, 100);
        ASSERT_LE(c.peaks.size(), distinct.size()) << "trial " << trial;
        for (const auto& pt : c.points) ASSERT_GE(pt.power, 0.0);
    }
}

TEST(StringProperties, RaisingIrradianceNeverLowersGmpp) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> g(50, 1200);
    std::uniform_int_distribution<int> which(0, 2);
    std::uniform_real_distribution<double> bump(1, 300);
    const auto ms = three();
    for (int trial = 0; trial < 60; ++trial) {
        ShadingPattern p{{g(rng), g(rng), g(rng)}, stc_t};
        const double before = find_gmpp(string_curve(ms, p, 300)).power;
        auto& x = p.irradiances[which(rng)];
        x = std::min(1500.0, x + bump(rng));
        const double after = find_gmpp(string_curve(ms, p, 300)).power;
        EXPECT_GE(after, before * (1 - 1e-9)) << "trial " << trial;
    }
}
