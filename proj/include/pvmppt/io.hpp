#pragma once

// Writers for curves, traces, metrics, batch summaries and training reports.
// Numbers are printed in shortest round-trip form so outputs are byte-stable.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvmppt/ann.hpp"
#include "pvmppt/error.hpp"
#include "pvmppt/mppt.hpp"
#include "pvmppt/pv_model.hpp"
#include "pvmppt/sim.hpp"

namespace pvmppt {

using Json = nlohmann::ordered_json;

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

} // namespace detail

inline void write_curve_csv(std::ostream& os, const PVCurve& curve) {
    using detail::format_double;
    os << "voltage_V,current_A,power_W\n";
    for (const auto& p : curve.points)
        os << format_double(p.voltage) << ',' << format_double(p.current) << ',' << format_double(p.power) << '\n';
}

/// Local peaks with the global one flagged, plus the refined optimum.
inline Json peaks_json(const PVCurve& curve, const OperatingPoint& gmpp) {
    Json j;
    j["count"] = curve.peaks.size();
    std::size_t best = 0;
    for (std::size_t k = 1; k < curve.peaks.size(); ++k)
        if (curve.peaks[k].power > curve.peaks[best].power) best = k;
    Json peaks = Json::array();
    for (std::size_t k = 0; k < curve.peaks.size(); ++k)
        peaks.push_back({{"voltage", curve.peaks[k].voltage}, {"power", curve.peaks[k].power}, {"global", k == best}});
    j["peaks"] = peaks;
    j["gmpp"] = {{"voltage", gmpp.voltage}, {"current", gmpp.current}, {"power", gmpp.power}};
    return j;
}

inline void write_trace_csv(std::ostream& os, const SimTrace& tr) {
    using detail::format_double;
    os << "t,v_in,i_pv,p_pv,v_out,i_out,p_out,duty\n";
    for (std::size_t k = 0; k < tr.size(); ++k)
        os << format_double(tr.t[k]) << ',' << format_double(tr.v_in[k]) << ',' << format_double(tr.i_pv[k]) << ','
           << format_double(tr.p_pv[k]) << ',' << format_double(tr.v_out[k]) << ',' << format_double(tr.i_out[k])
           << ',' << format_double(tr.p_out[k]) << ',' << format_double(tr.duty[k]) << '\n';
}

inline Json metrics_json(const MetricsReport& m) {
    Json j;
    j["final_power"] = m.final_power;
    j["final_voltage"] = m.final_voltage;
    j["gmpp_power"] = m.gmpp_power;
    j["gmpp_voltage"] = m.gmpp_voltage;
    j["tracking_efficiency"] = m.tracking_efficiency;
    j["converged"] = m.convergence_time.has_value();
    j["convergence_time"] = m.convergence_time ? Json(*m.convergence_time) : Json(nullptr);
    j["ripple"] = m.ripple;
    j["converged_to_global"] = m.converged_to_global;
    j["evaluations"] = m.evaluations;
    if (m.zone) j["zone"] = {{"v_min", m.zone->v_min}, {"v_max", m.zone->v_max}};
    return j;
}

inline void write_evaluations_csv(std::ostream& os, const std::vector<EvaluationRecord>& log) {
    using detail::format_double;
    os << "iteration,candidate,power,incumbent\n";
    for (const auto& r : log)
        os << r.iteration << ',' << format_double(r.candidate) << ',' << format_double(r.power) << ','
           << format_double(r.incumbent) << '\n';
}

inline void write_batch_csv(std::ostream& os, const std::vector<BatchRow>& rows) {
    using detail::format_double;
    os << "key,scenario,controller,seed,status,final_power,gmpp_power,tracking_efficiency,convergence_time,"
          "converged_to_global,ripple,evaluations,error\n";
    for (const auto& r : rows) {
        os << detail::csv_field(r.key) << ',' << detail::csv_field(r.scenario) << ',' << r.controller << ','
           << r.seed << ',';
        if (r.metrics) {
            const auto& m = *r.metrics;
            os << "ok," << format_double(m.final_power) << ',' << format_double(m.gmpp_power) << ','
               << format_double(m.tracking_efficiency) << ','
               << (m.convergence_time ? format_double(*m.convergence_time) : std::string()) << ','
               << (m.converged_to_global ? "true" : "false") << ',' << format_double(m.ripple) << ','
               << m.evaluations << ",\n";
        } else {
            os << "failed,,,,,,,," << detail::csv_field(r.error) << '\n';
        }
    }
}

inline void write_paired_csv(std::ostream& os, const std::vector<PairedStat>& stats) {
    os << "comparison,wins,total,rate\n";
    for (const auto& s : stats)
        os << s.name << ',' << s.wins << ',' << s.total << ',' << detail::format_double(s.rate()) << '\n';
}

inline Json training_report_json(const ZoneTrainingReport& r) {
    Json j;
    j["trained"] = r.trained;
    j["train_samples"] = r.train_size;
    j["holdout_samples"] = r.holdout_size;
    j["initial_mse"] = r.initial_mse;
    j["final_mse"] = r.final_mse;
    j["holdout_max_error_V"] = r.holdout_max_error;
    j["holdout_mean_error_V"] = r.holdout_mean_error;
    j["holdout_within_5V"] = r.holdout_within_5v;
    j["holdout_contained"] = r.holdout_contained;
    j["grid_samples"] = r.grid_size;
    j["grid_contained"] = r.grid_contained;
    j["containment_rate"] = r.containment_rate();
    j["label_warnings"] = r.warnings;
    return j;
}

/// Opens `path` for writing, creating parent directories.
inline std::ofstream open_output(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw FileError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot open '" + path.string() + "' for writing");
    return out;
}

inline void finish_output(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw FileError("write to '" + path.string() + "' failed");
}

} // namespace pvmppt
