#pragma once

// Averaged boost converter between a PV string and a resistive load.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <vector>

#include "pvmppt/error.hpp"
#include "pvmppt/pv_model.hpp"

namespace pvmppt {

struct ConverterParams {
    double c_in = 800e-6;
    double c_out = 850e-6;
    double inductance = 0.0005;
    double r_load = 50.0;
    double dt = 1e-5;
    double d_min = 0.05;
    double d_max = 0.95;
};

inline void validate(const ConverterParams& p) {
    if (!(p.c_in > 0 && p.c_out > 0 && p.inductance > 0 && p.r_load > 0 && p.dt > 0))
        throw ConfigError("converter: c_in, c_out, inductance, r_load and dt must be positive");
    if (p.dt > 1e-4) throw ConfigError("converter: dt must not exceed 1e-4 s");
    if (!(p.d_min > 0 && p.d_min < p.d_max && p.d_max < 1))
        throw ConfigError("converter: duty limits must satisfy 0 < d_min < d_max < 1");
}

struct PlantState {
    double v_in = 0.0;
    double i_l = 0.0;
    double v_out = 0.0;
    double t = 0.0;
    double duty = 0.05;

    bool operator==(const PlantState&) const = default;
};

/// Anything that yields the PV current at a terminal voltage.
template <typename S>
concept PvSource = requires(const S& s, double v) {
    { s.current_at(v) } -> std::convertible_to<double>;
};

/// Uniformly tabulated string I-V characteristic with linear interpolation.
/// Zero current at and beyond open circuit (blocking diode).
class PvTable {
public:
    PvTable() = default;

    explicit PvTable(const StringModel& model, std::size_t n_points = 4001)
        : voc_(model.open_circuit_voltage()), current_(n_points) {
        if (n_points < 2) throw ConfigError("PvTable: need at least two points");
        step_ = voc_ / static_cast<double>(n_points - 1);
        // Walk from open circuit towards short circuit, narrowing the bracket.
        double hi = model.current_ceiling();
        for (std::size_t k = n_points; k-- > 0;) {
            const double v = step_ * static_cast<double>(k);
            current_[k] = (k + 1 == n_points) ? 0.0 : model.current_between(v, current_[k + 1], hi);
        }
        if (voc_ <= 0) step_ = 1.0;
    }

    double open_circuit_voltage() const { return voc_; }

    double current_at(double v) const {
        if (current_.empty() || v >= voc_) return 0.0;
        if (v <= 0) return current_.front();
        const double x = v / step_;
        const auto k = static_cast<std::size_t>(x);
        if (k + 1 >= current_.size()) return current_.back();
        const double w = x - static_cast<double>(k);
        return current_[k] + w * (current_[k + 1] - current_[k]);
    }

private:
    double voc_ = 0.0;
    double step_ = 1.0;
    std::vector<double> current_;
};

struct PlantDerivative {
    double v_in;
    double i_l;
    double v_out;
};

template <PvSource Source>
PlantDerivative plant_derivative(double v_in, double i_l, double v_out, double duty, const ConverterParams& p,
                                 const Source& pv) {
    const double i_pv = pv.current_at(std::max(v_in, 0.0));
    return {(i_pv - i_l) / p.c_in, (v_in - (1.0 - duty) * v_out) / p.inductance,
            ((1.0 - duty) * i_l - v_out / p.r_load) / p.c_out};
}

/// One fixed RK4 step of length params.dt at the given duty cycle.
template <PvSource Source>
PlantState plant_step(const PlantState& s, const ConverterParams& p, double duty, const Source& pv) {
    if (!(duty >= p.d_min && duty <= p.d_max)) throw ConfigError("plant_step: duty outside [d_min, d_max]");
    const double h = p.dt;
    const auto k1 = plant_derivative(s.v_in, s.i_l, s.v_out, duty, p, pv);
    const auto k2 = plant_derivative(s.v_in + 0.5 * h * k1.v_in, s.i_l + 0.5 * h * k1.i_l,
                                     s.v_out + 0.5 * h * k1.v_out, duty, p, pv);
    const auto k3 = plant_derivative(s.v_in + 0.5 * h * k2.v_in, s.i_l + 0.5 * h * k2.i_l,
                                     s.v_out + 0.5 * h * k2.v_out, duty, p, pv);
    const auto k4 = plant_derivative(s.v_in + h * k3.v_in, s.i_l + h * k3.i_l, s.v_out + h * k3.v_out, duty, p, pv);

    PlantState next;
    next.t = s.t + h;
    next.duty = duty;
    next.v_in = s.v_in + h / 6.0 * (k1.v_in + 2 * k2.v_in + 2 * k3.v_in + k4.v_in);
    next.i_l = s.i_l + h / 6.0 * (k1.i_l + 2 * k2.i_l + 2 * k3.i_l + k4.i_l);
    next.v_out = s.v_out + h / 6.0 * (k1.v_out + 2 * k2.v_out + 2 * k3.v_out + k4.v_out);
    if (!std::isfinite(next.v_in)) throw InstabilityError("v_in", next.t);
    if (!std::isfinite(next.i_l)) throw InstabilityError("i_l", next.t);
    if (!std::isfinite(next.v_out)) throw InstabilityError("v_out", next.t);
    next.v_in = std::max(next.v_in, 0.0);
    next.i_l = std::max(next.i_l, 0.0);  // diode blocks reverse inductor current
    next.v_out = std::max(next.v_out, 0.0);
    return next;
}

/// PV-side voltage, current and power of a state.
template <PvSource Source>
OperatingPoint measure(const PlantState& s, const Source& pv) {
    const double v = s.v_in;
    const double i = pv.current_at(std::max(v, 0.0));
    return {v, i, v * i};
}

/// Load-side current and power.
inline OperatingPoint output_of(const PlantState& s, const ConverterParams& p) {
    const double i = s.v_out / p.r_load;
    return {s.v_out, i, s.v_out * i};
}

/// Duty that keeps the input at (v_in, i_l) in equilibrium with the load.
inline double equilibrium_duty(double v_in, double i_pv, double r_load) {
    if (i_pv <= 0) return 0.0;
    return 1.0 - std::sqrt(v_in / (i_pv * r_load));
}

/// Cascaded proportional regulation of the PV voltage: the voltage error sets
/// an inductor current reference and the current error sets the duty cycle.
struct VoltageRegulator {
    double voltage_bandwidth = 600.0;   // rad/s
    double current_bandwidth = 6000.0;  // rad/s

    double duty(const PlantState& s, double i_pv, double v_ref, const ConverterParams& p) const {
        if (s.v_out < 1e-6) return p.d_min;
        const double i_ref = i_pv + p.c_in * voltage_bandwidth * (s.v_in - v_ref);
        const double boost_voltage = s.v_in - p.inductance * current_bandwidth * (i_ref - s.i_l);
        return std::clamp(1.0 - boost_voltage / s.v_out, p.d_min, p.d_max);
    }
};

} // namespace pvmppt
