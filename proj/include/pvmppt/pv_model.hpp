#pragma once

// Single-diode photovoltaic module model, series strings with bypass diodes,
// and the brute-force global maximum power point oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "pvmppt/error.hpp"

namespace pvmppt {

namespace constants {
inline constexpr double boltzmann = 1.380649e-23;       // J/K
inline constexpr double elementary_charge = 1.602176634e-19; // C
inline constexpr double stc_temperature = 298.15;       // K
inline constexpr double stc_irradiance = 1000.0;        // W/m^2
} // namespace constants

inline double thermal_voltage(double temperature) {
    return constants::boltzmann * temperature / constants::elementary_charge;
}

/// Manufacturer datasheet values at standard test conditions.
struct Datasheet {
    double v_oc = 32.9;
    double i_sc = 8.21;
    double v_mp = 26.3;
    double i_mp = 7.61;
    int n_cells = 54;
    double k_i = 3.18e-3;   // A/K
    double k_v = -1.23e-1;  // V/K
    double ideality = 1.3;
    /// Force r_series = 0 and r_shunt = inf instead of fitting them.
    bool lossless = false;
};

/// Electrical parameters of one module. Photocurrent and saturation current
/// are derived from these at any operating condition.
struct ModuleSpec {
    double v_oc_stc = 0.0;
    double i_sc_stc = 0.0;
    double v_mp_stc = 0.0;
    double i_mp_stc = 0.0;
    int n_cells = 0;
    double ideality = 1.0;
    double r_series = 0.0;
    double r_shunt = std::numeric_limits<double>::infinity();
    double k_i = 0.0;
    double k_v = 0.0;

    double shunt_conductance() const { return std::isinf(r_shunt) ? 0.0 : 1.0 / r_shunt; }

    /// Modified thermal voltage of the whole module, ideality * n_cells * kT/q.
    double diode_voltage(double temperature) const {
        return ideality * n_cells * thermal_voltage(temperature);
    }

    double photocurrent(double irradiance, double temperature) const {
        const double iph_ref = i_sc_stc * (1.0 + r_series * shunt_conductance());
        const double dt = temperature - constants::stc_temperature;
        return (iph_ref + k_i * dt) * irradiance / constants::stc_irradiance;
    }

    /// Chosen so that the module current is exactly zero at the temperature
    /// shifted open-circuit voltage under STC irradiance.
    double saturation_current(double temperature) const {
        const double dt = temperature - constants::stc_temperature;
        const double voc = v_oc_stc + k_v * dt;
        const double iph = photocurrent(constants::stc_irradiance, temperature);
        return (iph - voc * shunt_conductance()) / std::expm1(voc / diode_voltage(temperature));
    }

    bool operator==(const ModuleSpec&) const = default;
};

/// Per-module irradiance (W/m^2) and a common cell temperature (K).
struct ShadingPattern {
    std::vector<double> irradiances;
    double temperature = constants::stc_temperature;

    bool operator==(const ShadingPattern&) const = default;
};

struct CurvePoint {
    double voltage;
    double current;
    double power;
};

struct Peak {
    double voltage;
    double power;
};

struct OperatingPoint {
    double voltage = 0.0;
    double current = 0.0;
    double power = 0.0;
};

namespace detail {

inline constexpr int max_newton_iterations = 200;
inline constexpr double current_tolerance = 1e-9;

/// Safeguarded Newton for a strictly decreasing f on [lo, hi] with
/// f(lo) >= 0 >= f(hi). Falls back to bisection when a Newton step leaves
/// the bracket.
template <typename F>
double decreasing_root(F&& f, double lo, double hi, double tolerance, const char* what) {
    double x = 0.5 * (lo + hi);
    double last = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_newton_iterations; ++it) {
        const auto [value, slope] = f(x);
        last = value;
        if (std::abs(value) < tolerance) return x;
        if (value > 0) lo = x; else hi = x;
        double next = x - value / slope;
        if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
        if (hi - lo < 1e-14 * std::max(1.0, std::abs(x))) return next;
        x = next;
    }
    throw SolverError(what, last);
}

struct DiodeTerms {
    double iph;
    double i0;
    double a;   // diode voltage
    double gp;  // shunt conductance
    double rs;
};

inline DiodeTerms diode_terms(const ModuleSpec& spec, double irradiance, double temperature) {
    return {spec.photocurrent(irradiance, temperature), spec.saturation_current(temperature),
            spec.diode_voltage(temperature), spec.shunt_conductance(), spec.r_series};
}

/// Net current balance of the implicit equation at (v, i) and its partials.
struct Balance {
    double value;
    double d_dv;
    double d_di;
};

inline Balance balance(const DiodeTerms& d, double v, double i) {
    const double vd = v + i * d.rs;
    const double e = std::exp(vd / d.a);
    const double g = d.i0 * e / d.a + d.gp;
    return {d.iph - d.i0 * (e - 1.0) - vd * d.gp - i, -g, -g * d.rs - 1.0};
}

inline double current_from(const DiodeTerms& d, double v) {
    auto f = [&](double i) {
        const Balance b = balance(d, v, i);
        return std::pair{b.value, b.d_di};
    };
    double hi = std::max(d.iph, 0.0) + 1e-9;
    if (f(hi).first > 0) hi = d.iph + 1.0;
    double lo = std::min(0.0, d.iph) - 1.0;
    for (int k = 0; f(lo).first < 0; ++k) {
        if (k > 60) throw SolverError("module current bracket", f(lo).first);
        lo *= 2.0;
    }
    while (f(hi).first > 0) hi = 2.0 * hi + 1.0;
    return decreasing_root(f, lo, hi, current_tolerance, "module current did not converge");
}

inline double voltage_from(const DiodeTerms& d, double i, double v_floor, double v_ceiling) {
    auto f = [&](double v) {
        const Balance b = balance(d, v, i);
        return std::pair{b.value, b.d_dv};
    };
    if (f(v_floor).first <= 0.0) return v_floor;
    double hi = v_ceiling;
    while (f(hi).first > 0) hi += 5.0;
    return decreasing_root(f, v_floor, hi, current_tolerance, "module voltage did not converge");
}

} // namespace detail

inline void validate(const ModuleSpec& spec) {
    if (!(spec.v_mp_stc > 0 && spec.v_mp_stc < spec.v_oc_stc))
        throw ConfigError("module: require 0 < v_mp < v_oc");
    if (!(spec.i_mp_stc > 0 && spec.i_mp_stc < spec.i_sc_stc))
        throw ConfigError("module: require 0 < i_mp < i_sc");
    if (spec.n_cells <= 0) throw ConfigError("module: n_cells must be positive");
    if (!(spec.r_series >= 0)) throw ConfigError("module: r_series must be >= 0");
    if (!(spec.r_shunt > spec.r_series)) throw ConfigError("module: r_shunt must exceed r_series");
    if (!(spec.ideality >= 1.0 && spec.ideality <= 2.0)) throw ConfigError("module: ideality must lie in [1, 2]");
}

inline void validate(const ShadingPattern& pattern, std::size_t n_modules) {
    if (pattern.irradiances.size() != n_modules)
        throw ConfigError("shading: " + std::to_string(pattern.irradiances.size()) +
                          " irradiances given for " + std::to_string(n_modules) + " modules");
    for (double g : pattern.irradiances)
        if (!(g >= 0.0 && g <= 1500.0)) throw ConfigError("shading: irradiance outside [0, 1500] W/m^2");
    if (!(pattern.temperature >= 233.0 && pattern.temperature <= 373.0))
        throw ConfigError("shading: temperature outside [233, 373] K");
}

/// Current delivered by one module at terminal voltage v.
inline double module_current(const ModuleSpec& spec, double irradiance, double temperature, double v) {
    if (irradiance < 0) throw ConfigError("module_current: negative irradiance");
    return detail::current_from(detail::diode_terms(spec, irradiance, temperature), v);
}

/// Terminal voltage of one module carrying current i, never below the
/// bypass diode clamp -bypass_drop.
inline double module_voltage(const ModuleSpec& spec, double irradiance, double temperature, double i,
                             double bypass_drop = 0.0) {
    const double dt = temperature - constants::stc_temperature;
    const double ceiling = spec.v_oc_stc + std::abs(spec.k_v * dt) + 5.0;
    return detail::voltage_from(detail::diode_terms(spec, irradiance, temperature), i, -bypass_drop, ceiling);
}

/// Maximum power point of a single module (unimodal, golden-section search).
inline OperatingPoint module_mpp(const ModuleSpec& spec, double irradiance, double temperature) {
    const auto terms = detail::diode_terms(spec, irradiance, temperature);
    const double voc = detail::voltage_from(terms, 0.0, 0.0, spec.v_oc_stc + 10.0);
    auto power = [&](double v) { return v * detail::current_from(terms, v); };
    const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = 0.0, b = voc;
    double c = b - ratio * (b - a), d = a + ratio * (b - a);
    double pc = power(c), pd = power(d);
    while (b - a > 1e-6) {
        if (pc > pd) { b = d; d = c; pd = pc; c = b - ratio * (b - a); pc = power(c); }
        else { a = c; c = d; pc = pd; d = a + ratio * (b - a); pd = power(d); }
    }
    const double v = 0.5 * (a + b);
    const double i = detail::current_from(terms, v);
    return {v, i, v * i};
}

/// Fits r_series and r_shunt so the modeled curve passes through the
/// datasheet maximum power point with zero slope there.
inline ModuleSpec calibrate_module(const Datasheet& ds) {
    if (!(ds.v_mp > 0 && ds.v_mp < ds.v_oc)) throw ConfigError("datasheet: require 0 < v_mp < v_oc");
    if (!(ds.i_mp > 0 && ds.i_mp < ds.i_sc)) throw ConfigError("datasheet: require 0 < i_mp < i_sc");
    if (ds.n_cells <= 0) throw ConfigError("datasheet: n_cells must be positive");
    if (!(ds.ideality >= 1.0 && ds.ideality <= 2.0)) throw ConfigError("datasheet: ideality must lie in [1, 2]");

    ModuleSpec spec{ds.v_oc, ds.i_sc, ds.v_mp, ds.i_mp, ds.n_cells, ds.ideality,
                    0.0, std::numeric_limits<double>::infinity(), ds.k_i, ds.k_v};
    if (ds.lossless) return spec;

    const double a = spec.diode_voltage(constants::stc_temperature);
    const double p_target = ds.v_mp * ds.i_mp;

    // Passing through (v_mp, i_mp) is linear in the shunt conductance once
    // r_series is fixed, so it has a closed-form solution.
    auto shunt_for = [&](double rs) {
        const double ratio = std::expm1((ds.v_mp + ds.i_mp * rs) / a) / std::expm1(ds.v_oc / a);
        const double h0 = ds.i_sc - ds.i_sc * ratio - ds.i_mp;
        const double h1 = ds.i_sc * rs - (ds.i_sc * rs - ds.v_oc) * ratio - (ds.v_mp + ds.i_mp * rs);
        return -h0 / h1;
    };
    auto with = [&](double rs) {
        ModuleSpec s = spec;
        const double gp = shunt_for(rs);
        s.r_series = rs;
        s.r_shunt = gp > 0 ? 1.0 / gp : std::numeric_limits<double>::infinity();
        return s;
    };
    // dP/dV at v_mp; zero means the datasheet point is the curve maximum.
    auto slope_at_mp = [&](double rs) {
        const ModuleSpec s = with(rs);
        const auto d = detail::diode_terms(s, constants::stc_irradiance, constants::stc_temperature);
        const double e = std::exp((ds.v_mp + ds.i_mp * rs) / d.a);
        const double g = d.i0 * e / d.a + d.gp;
        const double di_dv = -g / (1.0 + rs * g);
        return ds.i_mp + ds.v_mp * di_dv;
    };

    // Feasible r_series keeps the shunt conductance non-negative.
    double rs_hi = 0.0;
    const double rs_step = 0.01 * ds.v_oc / ds.i_sc;
    while (shunt_for(rs_hi + rs_step) > 0 && rs_hi < ds.v_oc / ds.i_sc) rs_hi += rs_step;
    if (!(shunt_for(0.0) >= 0)) throw CalibrationError("calibration: no non-negative shunt conductance at r_series = 0");
    double lo = 0.0, hi = rs_hi;
    double s_lo = slope_at_mp(lo), s_hi = slope_at_mp(hi);
    if (s_lo * s_hi > 0) {
        throw CalibrationError("calibration: no (r_series, r_shunt) pair places the maximum at the datasheet point");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double s_mid = slope_at_mp(mid);
        if ((s_mid > 0) == (s_lo > 0)) { lo = mid; s_lo = s_mid; } else { hi = mid; }
    }
    ModuleSpec fitted = with(0.5 * (lo + hi));
    if (!(fitted.r_shunt > fitted.r_series)) throw CalibrationError("calibration: fitted r_shunt <= r_series");
    const double p_model = module_mpp(fitted, constants::stc_irradiance, constants::stc_temperature).power;
    if (std::abs(p_model - p_target) > 0.01 * p_target)
        throw CalibrationError("calibration: modeled maximum power misses the datasheet by more than 1%");
    return fitted;
}

/// Kyocera KC200GT-class module (54 cells, 200 W).
inline ModuleSpec kc200gt() {
    static const ModuleSpec spec = calibrate_module(Datasheet{});
    return spec;
}

/// Series string of modules, each with an antiparallel bypass diode.
class StringModel {
public:
    StringModel(std::vector<ModuleSpec> modules, ShadingPattern pattern, double bypass_drop = 0.0)
        : modules_(std::move(modules)), pattern_(std::move(pattern)), bypass_drop_(bypass_drop) {
        if (modules_.empty()) throw ConfigError("string: at least one module required");
        if (!(bypass_drop_ >= 0)) throw ConfigError("string: bypass drop must be >= 0");
        for (const auto& m : modules_) validate(m);
        validate(pattern_, modules_.size());
        for (std::size_t k = 0; k < modules_.size(); ++k) {
            terms_.push_back(detail::diode_terms(modules_[k], pattern_.irradiances[k], pattern_.temperature));
            const double dt = pattern_.temperature - constants::stc_temperature;
            ceilings_.push_back(modules_[k].v_oc_stc + std::abs(modules_[k].k_v * dt) + 5.0);
        }
        double top = 0.0;
        for (const auto& t : terms_) top = std::max(top, detail::current_from(t, -bypass_drop_));
        current_ceiling_ = top + 1e-6;
        open_circuit_voltage_ = voltage_at(0.0);
    }

    const std::vector<ModuleSpec>& modules() const { return modules_; }
    const ShadingPattern& pattern() const { return pattern_; }
    double bypass_drop() const { return bypass_drop_; }
    double open_circuit_voltage() const { return open_circuit_voltage_; }
    /// Current above which every module is bypassed.
    double current_ceiling() const { return current_ceiling_; }

    /// String voltage when carrying current i.
    double voltage_at(double i) const {
        double v = 0.0;
        for (std::size_t k = 0; k < terms_.size(); ++k)
            v += detail::voltage_from(terms_[k], i, -bypass_drop_, ceilings_[k]);
        return v;
    }

    /// String current at terminal voltage v; zero at and beyond open circuit.
    double current_at(double v) const { return current_between(v, 0.0, current_ceiling_); }

    /// String voltage at current i and its derivative dV/dI.
    std::pair<double, double> voltage_and_slope(double i) const {
        double v = 0.0, slope = 0.0;
        for (std::size_t k = 0; k < terms_.size(); ++k) {
            const auto& d = terms_[k];
            const double vk = detail::voltage_from(d, i, -bypass_drop_, ceilings_[k]);
            v += vk;
            if (vk > -bypass_drop_) {
                const double g = d.i0 * std::exp((vk + i * d.rs) / d.a) / d.a + d.gp;
                slope -= (1.0 + g * d.rs) / g;
            }
        }
        return {v, slope};
    }

    /// Current in [lo, hi] at which the string voltage equals v (the smallest
    /// such current where the characteristic is flat). Safeguarded Newton.
    double current_between(double v, double lo, double hi) const {
        if (v >= open_circuit_voltage_) return 0.0;
        double x = 0.5 * (lo + hi);
        for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
            const auto [vx, slope] = voltage_and_slope(x);
            const double r = vx - v;
            if (r > 0) lo = x; else hi = x;
            if (std::abs(r) < 1e-10 && slope < 0) return x;
            double next = slope < 0 ? x - r / slope : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            x = next;
        }
        return 0.5 * (lo + hi);
    }

    double power_at(double v) const { return v * current_at(v); }

private:
    std::vector<ModuleSpec> modules_;
    ShadingPattern pattern_;
    double bypass_drop_;
    std::vector<detail::DiodeTerms> terms_;
    std::vector<double> ceilings_;
    double current_ceiling_ = 0.0;
    double open_circuit_voltage_ = 0.0;
};

/// Sampled P-V / I-V characteristic with its local power maxima.
struct PVCurve {
    std::vector<CurvePoint> points;
    std::vector<Peak> peaks;
    /// Exact model the samples came from, used to refine the optimum.
    std::optional<StringModel> source;
};

/// Interior local maxima of sampled power, ignoring bumps below
/// relative_floor of the largest sample.
inline std::vector<Peak> detect_peaks(const std::vector<CurvePoint>& pts, double relative_floor = 1e-9) {
    std::vector<Peak> peaks;
    double p_max = 0.0;
    for (const auto& p : pts) p_max = std::max(p_max, p.power);
    const double floor = relative_floor * p_max;
    for (std::size_t m = 1; m + 1 < pts.size(); ++m) {
        if (pts[m].power > pts[m - 1].power && pts[m].power >= pts[m + 1].power && pts[m].power > floor)
            peaks.push_back({pts[m].voltage, pts[m].power});
    }
    return peaks;
}

inline PVCurve string_curve(const StringModel& model, std::size_t n_samples) {
    if (n_samples < 100) throw ConfigError("string_curve: need at least 100 samples");

    // Sweep current first: each bypass branch is single-valued in current.
    const std::size_t n_sweep = 4 * n_samples;
    std::vector<double> sweep_i(n_sweep), sweep_v(n_sweep);
    for (std::size_t j = 0; j < n_sweep; ++j) {
        sweep_i[j] = model.current_ceiling() * static_cast<double>(j) / static_cast<double>(n_sweep - 1);
        sweep_v[j] = model.voltage_at(sweep_i[j]);
    }

    PVCurve curve;
    curve.points.reserve(n_samples);
    const double voc = model.open_circuit_voltage();
    std::size_t j = n_sweep - 1;  // sweep_v is non-increasing in j
    for (std::size_t m = 0; m < n_samples; ++m) {
        const double v = voc * static_cast<double>(m) / static_cast<double>(n_samples - 1);
        while (j > 0 && sweep_v[j - 1] <= v) --j;
        const double lo = j > 0 ? sweep_i[j - 1] : 0.0;
        const double i = (m + 1 == n_samples) ? 0.0 : model.current_between(v, lo, sweep_i[j]);
        curve.points.push_back({v, i, v * i});
    }
    curve.peaks = detect_peaks(curve.points);
    curve.source = model;
    return curve;
}

inline PVCurve string_curve(const std::vector<ModuleSpec>& specs, const ShadingPattern& pattern,
                            std::size_t n_samples, double bypass_drop = 0.0) {
    return string_curve(StringModel(specs, pattern, bypass_drop), n_samples);
}

/// Global maximum over the samples, refined around the best sample by
/// golden-section search to 1e-3 V.
inline OperatingPoint find_gmpp(const PVCurve& curve) {
    if (curve.points.empty()) throw ConfigError("find_gmpp: empty curve");
    const auto& pts = curve.points;
    std::size_t best = 0;
    for (std::size_t m = 1; m < pts.size(); ++m)
        if (pts[m].power > pts[best].power) best = m;
    if (pts.size() < 3) return {pts[best].voltage, pts[best].current, pts[best].power};

    double a = pts[best == 0 ? 0 : best - 1].voltage;
    double b = pts[std::min(best + 1, pts.size() - 1)].voltage;

    auto power = [&](double v) {
        if (curve.source) return curve.source->power_at(v);
        // Piecewise-linear current between samples.
        auto it = std::lower_bound(pts.begin(), pts.end(), v,
                                   [](const CurvePoint& p, double x) { return p.voltage < x; });
        if (it == pts.begin()) return it->power;
        if (it == pts.end()) return pts.back().power;
        const auto& hi = *it;
        const auto& lo = *(it - 1);
        const double w = (v - lo.voltage) / (hi.voltage - lo.voltage);
        return v * (lo.current + w * (hi.current - lo.current));
    };

    const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - ratio * (b - a), d = a + ratio * (b - a);
    double pc = power(c), pd = power(d);
    while (b - a > 1e-3) {
        if (pc > pd) { b = d; d = c; pd = pc; c = b - ratio * (b - a); pc = power(c); }
        else { a = c; c = d; pc = pd; d = a + ratio * (b - a); pd = power(d); }
    }
    const double v = 0.5 * (a + b);
    double p = power(v);
    OperatingPoint out{v, v > 0 ? p / v : 0.0, p};
    if (pts[best].power > out.power) out = {pts[best].voltage, pts[best].current, pts[best].power};
    return out;
}

} // namespace pvmppt
