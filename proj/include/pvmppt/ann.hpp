#pragma once

// Feedforward network predicting the voltage zone that holds the global
// maximum power point from per-module irradiance.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "pvmppt/error.hpp"
#include "pvmppt/mppt.hpp"
#include "pvmppt/pv_model.hpp"

namespace pvmppt {

/// Dense layer, weights row-major (outputs x inputs).
struct DenseLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::vector<double> weights;
    std::vector<double> biases;

    bool operator==(const DenseLayer&) const = default;
};

/// tanh hidden layers, linear output layer. Inputs are divided by
/// input_scale and outputs multiplied by output_scale. With sort_inputs the
/// irradiances are presented in ascending order, which makes the network
/// invariant to module order like the string itself.
struct Mlp {
    std::vector<DenseLayer> layers;
    double input_scale = 1000.0;
    double output_scale = 1.0;
    bool sort_inputs = true;

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> out;
        if (layers.empty()) return out;
        out.push_back(layers.front().inputs);
        for (const auto& l : layers) out.push_back(l.outputs);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weights.size() + l.biases.size();
        return n;
    }

    bool operator==(const Mlp&) const = default;
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
inline Mlp make_mlp(const std::vector<std::size_t>& sizes, double input_scale, double output_scale,
                    std::uint64_t seed, bool sort_inputs = true) {
    if (sizes.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
    for (auto s : sizes)
        if (s == 0) throw ConfigError("mlp: layer sizes must be positive");
    if (!(input_scale > 0 && output_scale > 0)) throw ConfigError("mlp: scales must be positive");
    Rng rng(seed);
    Mlp net;
    net.input_scale = input_scale;
    net.output_scale = output_scale;
    net.sort_inputs = sort_inputs;
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
        DenseLayer l{sizes[k], sizes[k + 1], {}, {}};
        const double r = 1.0 / std::sqrt(static_cast<double>(l.inputs));
        std::uniform_real_distribution<double> unif(-r, r);
        l.weights.resize(l.inputs * l.outputs);
        for (auto& w : l.weights) w = unif(rng);
        l.biases.assign(l.outputs, 0.0);
        net.layers.push_back(std::move(l));
    }
    return net;
}

namespace detail {

/// Activations of every layer for one normalized input.
inline std::vector<std::vector<double>> forward_all(const Mlp& net, const std::vector<double>& x) {
    std::vector<std::vector<double>> acts{x};
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const auto& l = net.layers[k];
        const auto& in = acts.back();
        std::vector<double> out(l.outputs);
        for (std::size_t o = 0; o < l.outputs; ++o) {
            double z = l.biases[o];
            for (std::size_t i = 0; i < l.inputs; ++i) z += l.weights[o * l.inputs + i] * in[i];
            out[o] = (k + 1 < net.layers.size()) ? std::tanh(z) : z;
        }
        acts.push_back(std::move(out));
    }
    return acts;
}

} // namespace detail

/// Network output in normalized units.
inline std::vector<double> forward(const Mlp& net, const std::vector<double>& normalized_input) {
    if (net.layers.empty() || normalized_input.size() != net.layers.front().inputs)
        throw ConfigError("mlp: input size mismatch");
    return detail::forward_all(net, normalized_input).back();
}

/// Irradiances (W/m^2) to network input.
inline std::vector<double> normalize_input(const Mlp& net, const std::vector<double>& irradiances) {
    std::vector<double> x;
    for (double g : irradiances) x.push_back(g / net.input_scale);
    if (net.sort_inputs) std::sort(x.begin(), x.end());
    return x;
}

/// Normalized training pair.
struct TrainingPair {
    std::vector<double> input;
    std::vector<double> target;
};

inline double mse(const Mlp& net, const std::vector<TrainingPair>& data) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& d : data) {
        const auto y = forward(net, d.input);
        for (std::size_t o = 0; o < y.size(); ++o) sum += (y[o] - d.target[o]) * (y[o] - d.target[o]);
        count += y.size();
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

/// Gradient of the mean squared error, flattened layer by layer as
/// (weights, biases).
inline std::vector<double> mse_gradient(const Mlp& net, const std::vector<TrainingPair>& data) {
    std::vector<double> grad(net.parameter_count(), 0.0);
    if (data.empty()) return grad;
    const double scale = 2.0 / static_cast<double>(data.size() * net.layers.back().outputs);
    std::vector<std::size_t> offset(net.layers.size());
    for (std::size_t k = 0, off = 0; k < net.layers.size(); ++k) {
        offset[k] = off;
        off += net.layers[k].weights.size() + net.layers[k].biases.size();
    }
    for (const auto& d : data) {
        const auto acts = detail::forward_all(net, d.input);
        std::vector<double> delta(acts.back().size());
        for (std::size_t o = 0; o < delta.size(); ++o) delta[o] = scale * (acts.back()[o] - d.target[o]);
        for (std::size_t k = net.layers.size(); k-- > 0;) {
            const auto& l = net.layers[k];
            const auto& in = acts[k];
            double* gw = grad.data() + offset[k];
            double* gb = gw + l.weights.size();
            for (std::size_t o = 0; o < l.outputs; ++o) {
                gb[o] += delta[o];
                for (std::size_t i = 0; i < l.inputs; ++i) gw[o * l.inputs + i] += delta[o] * in[i];
            }
            if (k == 0) break;
            std::vector<double> prev(l.inputs, 0.0);
            for (std::size_t i = 0; i < l.inputs; ++i) {
                double s = 0.0;
                for (std::size_t o = 0; o < l.outputs; ++o) s += l.weights[o * l.inputs + i] * delta[o];
                prev[i] = s * (1.0 - in[i] * in[i]);  // tanh'
            }
            delta = std::move(prev);
        }
    }
    return grad;
}

/// Flattened parameters in the same order as mse_gradient.
inline std::vector<double> parameters(const Mlp& net) {
    std::vector<double> p;
    for (const auto& l : net.layers) {
        p.insert(p.end(), l.weights.begin(), l.weights.end());
        p.insert(p.end(), l.biases.begin(), l.biases.end());
    }
    return p;
}

inline void set_parameters(Mlp& net, const std::vector<double>& p) {
    if (p.size() != net.parameter_count()) throw ConfigError("mlp: parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : net.layers) {
        for (auto& w : l.weights) w = p[k++];
        for (auto& b : l.biases) b = p[k++];
    }
}

enum class Optimizer { GradientDescent, Adam };

struct TrainOptions {
    std::size_t epochs = 20000;
    double learning_rate = 0.01;
    Optimizer optimizer = Optimizer::Adam;
    double momentum = 0.0;  // heavy-ball term, plain gradient descent only
};

struct TrainResult {
    Mlp net;
    double initial_mse = 0.0;
    double final_mse = 0.0;
    std::vector<double> history;  // loss before each epoch, then the final loss
};

/// Full-batch training on the mean squared error, either plain gradient
/// descent (optionally with momentum) or Adam-scaled gradient steps.
inline TrainResult train(Mlp net, const std::vector<TrainingPair>& data, const TrainOptions& opt) {
    if (data.empty()) throw ConfigError("train: empty dataset");
    if (!(opt.learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
    if (!(opt.momentum >= 0 && opt.momentum < 1)) throw ConfigError("train: momentum must lie in [0, 1)");
    TrainResult r;
    r.initial_mse = mse(net, data);
    r.history.push_back(r.initial_mse);
    auto p = parameters(net);
    std::vector<double> m1(p.size(), 0.0), m2(p.size(), 0.0);
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double b1t = 1.0, b2t = 1.0;
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        const auto g = mse_gradient(net, data);
        if (opt.optimizer == Optimizer::Adam) {
            b1t *= b1;
            b2t *= b2;
            for (std::size_t k = 0; k < p.size(); ++k) {
                m1[k] = b1 * m1[k] + (1 - b1) * g[k];
                m2[k] = b2 * m2[k] + (1 - b2) * g[k] * g[k];
                p[k] -= opt.learning_rate * (m1[k] / (1 - b1t)) / (std::sqrt(m2[k] / (1 - b2t)) + eps);
            }
        } else {
            for (std::size_t k = 0; k < p.size(); ++k) {
                m1[k] = opt.momentum * m1[k] - opt.learning_rate * g[k];
                p[k] += m1[k];
            }
        }
        set_parameters(net, p);
        const double loss = mse(net, data);
        if (!std::isfinite(loss))
            throw DivergenceError("train: loss became non-finite at epoch " + std::to_string(e + 1) +
                                  "; lower the learning rate");
        r.history.push_back(loss);
    }
    r.final_mse = r.history.back();
    r.net = std::move(net);
    return r;
}

// ---------------------------------------------------------------------------
// Zone dataset

struct ZoneSample {
    std::vector<double> irradiances;
    double v_min = 0.0;
    double v_max = 0.0;
    double v_gmpp = 0.0;  // oracle voltage the zone was built around
    std::size_t zone = 0; // number of conducting modules at the optimum
};

struct ZoneOptions {
    double half_width = 0.15;  // fraction of v_mp_stc
    std::size_t curve_samples = 600;
    double temperature = constants::stc_temperature;
    double bypass_drop = 0.0;
};

struct ZoneDataset {
    std::vector<ZoneSample> samples;
    std::vector<std::string> warnings;
};

/// Labels each pattern with the zone around k * v_mp_stc, k being the number
/// of modules conducting at the oracle optimum. When the optimum sits within
/// half a half-width of a zone edge the zone is widened to keep it inside.
inline ZoneSample label_zone(const std::vector<ModuleSpec>& specs, const ShadingPattern& pattern,
                             const ZoneOptions& opt, std::vector<std::string>* warnings = nullptr) {
    const StringModel model(specs, pattern, opt.bypass_drop);
    const auto curve = string_curve(model, opt.curve_samples);
    const auto g = find_gmpp(curve);

    std::size_t conducting = 0;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const double v = module_voltage(specs[k], pattern.irradiances[k], pattern.temperature, g.current,
                                        opt.bypass_drop);
        if (v > -opt.bypass_drop + 1e-9) ++conducting;
    }
    conducting = std::max<std::size_t>(conducting, 1);

    const double v_mp = specs.front().v_mp_stc;
    const double center = static_cast<double>(conducting) * v_mp;
    const double h = opt.half_width * v_mp;
    ZoneSample s{pattern.irradiances, center - h, center + h, g.voltage, conducting};
    if (g.voltage < s.v_min + 0.5 * h || g.voltage > s.v_max - 0.5 * h) {
        s.v_min = std::min(s.v_min, g.voltage - 0.5 * h);
        s.v_max = std::max(s.v_max, g.voltage + 0.5 * h);
        if (warnings) {
            std::ostringstream os;
            os << "zone " << conducting << " widened to [" << s.v_min << ", " << s.v_max << "] V for optimum at "
               << g.voltage << " V";
            warnings->push_back(os.str());
        }
    }
    s.v_min = std::max(s.v_min, 0.0);
    s.v_max = std::min(s.v_max, model.open_circuit_voltage());
    return s;
}

inline ZoneDataset generate_zone_dataset(const std::vector<ModuleSpec>& specs,
                                         const std::vector<ShadingPattern>& patterns,
                                         const ZoneOptions& opt = {}) {
    ZoneDataset ds;
    for (const auto& p : patterns) ds.samples.push_back(label_zone(specs, p, opt, &ds.warnings));
    return ds;
}

/// Every combination of the listed levels across n modules.
inline std::vector<ShadingPattern> irradiance_grid(const std::vector<double>& levels, std::size_t n_modules,
                                                   double temperature = constants::stc_temperature) {
    std::vector<ShadingPattern> out;
    if (levels.empty() || n_modules == 0) return out;
    std::vector<std::size_t> idx(n_modules, 0);
    while (true) {
        ShadingPattern p{{}, temperature};
        for (auto i : idx) p.irradiances.push_back(levels[i]);
        out.push_back(std::move(p));
        std::size_t k = n_modules;
        while (k > 0 && ++idx[k - 1] == levels.size()) idx[--k] = 0;
        if (k == 0) break;
    }
    return out;
}

inline TrainingPair to_training_pair(const Mlp& net, const ZoneSample& s) {
    return {normalize_input(net, s.irradiances), {s.v_min / net.output_scale, s.v_max / net.output_scale}};
}

inline std::vector<TrainingPair> to_training_set(const Mlp& net, const std::vector<ZoneSample>& samples) {
    std::vector<TrainingPair> out;
    for (const auto& s : samples) out.push_back(to_training_pair(net, s));
    return out;
}

struct ZonePrediction {
    Zone zone;
    bool swapped = false;
};

/// Denormalized forward pass, clamped to [0, output_scale]. Inverted
/// outputs are swapped and flagged.
inline ZonePrediction predict_zone(const Mlp& net, const std::vector<double>& irradiances) {
    const auto y = forward(net, normalize_input(net, irradiances));
    if (y.size() != 2) throw ConfigError("predict_zone: network must have two outputs");
    double lo = std::clamp(y[0], 0.0, 1.0) * net.output_scale;
    double hi = std::clamp(y[1], 0.0, 1.0) * net.output_scale;
    ZonePrediction out;
    if (lo > hi) {
        std::swap(lo, hi);
        out.swapped = true;
    }
    if (lo == hi) {
        const double eps = 1e-6 * net.output_scale;
        if (hi + eps <= net.output_scale) hi += eps; else lo -= eps;
    }
    out.zone = {lo, hi};
    return out;
}

// ---------------------------------------------------------------------------
// Zone model training

struct ZoneTrainingConfig {
    std::vector<double> levels{200, 400, 600, 800, 1000};
    std::size_t hidden = 10;
    TrainOptions train{};
    std::uint64_t seed = 1;  // weight initialization
    double holdout_fraction = 0.2;
    std::uint64_t split_seed = 7;
    bool sort_inputs = true;
    ZoneOptions zone{};
};

struct ZoneTrainingReport {
    Mlp net;
    bool trained = false;
    std::size_t train_size = 0;
    std::size_t holdout_size = 0;
    double initial_mse = 0.0;
    double final_mse = 0.0;
    double holdout_max_error = 0.0;   // worst bound error, V
    double holdout_mean_error = 0.0;  // mean bound error, V
    std::size_t holdout_within_5v = 0;
    std::size_t holdout_contained = 0;
    std::size_t grid_size = 0;
    std::size_t grid_contained = 0;
    std::vector<std::string> warnings;

    double containment_rate() const {
        return grid_size ? static_cast<double>(grid_contained) / static_cast<double>(grid_size) : 0.0;
    }
};

inline bool zone_contains(const Zone& z, double v) { return v >= z.v_min && v <= z.v_max; }

/// Labels the irradiance grid with the oracle, holds out a shuffled fraction,
/// trains a 3-h-2 network on the rest and scores both parts.
inline ZoneTrainingReport train_zone_model(const std::vector<ModuleSpec>& specs, const ZoneTrainingConfig& cfg) {
    if (specs.empty()) throw ConfigError("train_zone_model: no modules");
    if (cfg.levels.empty()) throw ConfigError("train_zone_model: no irradiance levels");
    if (cfg.hidden == 0) throw ConfigError("train_zone_model: hidden layer must not be empty");
    if (!(cfg.holdout_fraction >= 0 && cfg.holdout_fraction < 1))
        throw ConfigError("train_zone_model: holdout fraction must lie in [0, 1)");
    for (double g : cfg.levels)
        if (!(g >= 0 && g <= 1500)) throw ConfigError("train_zone_model: irradiance level outside [0, 1500]");

    const auto ds = generate_zone_dataset(specs, irradiance_grid(cfg.levels, specs.size(), cfg.zone.temperature), cfg.zone);
    std::vector<std::size_t> order(ds.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split(cfg.split_seed);
    std::shuffle(order.begin(), order.end(), split);
    const auto n_hold = static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(order.size()));
    std::vector<ZoneSample> fit, hold;
    for (std::size_t k = 0; k < order.size(); ++k) (k < n_hold ? hold : fit).push_back(ds.samples[order[k]]);
    if (fit.empty()) throw ConfigError("train_zone_model: nothing left to train on");

    double v_scale = 0.0;
    for (const auto& m : specs) v_scale += m.v_oc_stc;
    Mlp net = make_mlp({specs.size(), cfg.hidden, 2}, constants::stc_irradiance, v_scale, cfg.seed, cfg.sort_inputs);
    const auto data = to_training_set(net, fit);
    const auto result = train(std::move(net), data, cfg.train);

    ZoneTrainingReport r;
    r.net = result.net;
    r.trained = cfg.train.epochs > 0;
    r.train_size = fit.size();
    r.holdout_size = hold.size();
    r.initial_mse = result.initial_mse;
    r.final_mse = result.final_mse;
    r.warnings = ds.warnings;
    for (const auto& s : hold) {
        const Zone z = predict_zone(r.net, s.irradiances).zone;
        const double err = std::max(std::abs(z.v_min - s.v_min), std::abs(z.v_max - s.v_max));
        r.holdout_max_error = std::max(r.holdout_max_error, err);
        r.holdout_mean_error += err / static_cast<double>(hold.size());
        if (err < 5.0) ++r.holdout_within_5v;
        if (zone_contains(z, s.v_gmpp)) ++r.holdout_contained;
    }
    r.grid_size = ds.samples.size();
    for (const auto& s : ds.samples)
        if (zone_contains(predict_zone(r.net, s.irradiances).zone, s.v_gmpp)) ++r.grid_contained;
    return r;
}

// ---------------------------------------------------------------------------
// Persistence: plain text, shortest round-trip decimal for every value.

namespace detail {

inline std::string format_double(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& tok) {
    double x = 0.0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (r.ec != std::errc{} || r.ptr != tok.data() + tok.size())
        throw ConfigError("model file: bad number '" + tok + "'");
    return x;
}

} // namespace detail

inline void save_mlp(std::ostream& os, const Mlp& net) {
    os << "pvmppt-mlp 1\n";
    os << "layers";
    for (auto s : net.sizes()) os << ' ' << s;
    os << "\nhidden_activation tanh\noutput_activation linear\n";
    os << "input_order " << (net.sort_inputs ? "sorted" : "given") << '\n';
    os << "input_scale " << detail::format_double(net.input_scale) << '\n';
    os << "output_scale " << detail::format_double(net.output_scale) << '\n';
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const auto& l = net.layers[k];
        os << "weights " << k << ' ' << l.outputs << ' ' << l.inputs << '\n';
        for (std::size_t o = 0; o < l.outputs; ++o) {
            for (std::size_t i = 0; i < l.inputs; ++i)
                os << (i ? " " : "") << detail::format_double(l.weights[o * l.inputs + i]);
            os << '\n';
        }
        os << "biases " << k << ' ' << l.outputs << '\n';
        for (std::size_t o = 0; o < l.outputs; ++o) os << (o ? " " : "") << detail::format_double(l.biases[o]);
        os << '\n';
    }
}

inline Mlp load_mlp(std::istream& is) {
    auto expect = [&](const std::string& want) {
        std::string tok;
        if (!(is >> tok) || tok != want) throw ConfigError("model file: expected '" + want + "', got '" + tok + "'");
    };
    auto number = [&]() {
        std::string tok;
        if (!(is >> tok)) throw ConfigError("model file: unexpected end of file");
        return detail::parse_double(tok);
    };
    auto count = [&]() {
        std::string tok;
        if (!(is >> tok)) throw ConfigError("model file: unexpected end of file");
        std::size_t n = 0;
        const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), n);
        if (r.ec != std::errc{} || r.ptr != tok.data() + tok.size())
            throw ConfigError("model file: bad count '" + tok + "'");
        return n;
    };

    expect("pvmppt-mlp");
    if (count() != 1) throw ConfigError("model file: unsupported version");
    expect("layers");
    std::vector<std::size_t> sizes;
    std::string line;
    std::getline(is, line);
    std::istringstream ls(line);
    for (std::string tok; ls >> tok;) {
        std::size_t n = 0;
        const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), n);
        if (r.ec != std::errc{} || n == 0) throw ConfigError("model file: bad layer size '" + tok + "'");
        sizes.push_back(n);
    }
    if (sizes.size() < 2) throw ConfigError("model file: need at least two layer sizes");
    expect("hidden_activation");
    expect("tanh");
    expect("output_activation");
    expect("linear");
    Mlp net;
    expect("input_order");
    {
        std::string order;
        is >> order;
        if (order != "sorted" && order != "given") throw ConfigError("model file: bad input_order '" + order + "'");
        net.sort_inputs = order == "sorted";
    }
    expect("input_scale");
    net.input_scale = number();
    expect("output_scale");
    net.output_scale = number();
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
        DenseLayer l{sizes[k], sizes[k + 1], {}, {}};
        expect("weights");
        if (count() != k || count() != l.outputs || count() != l.inputs)
            throw ConfigError("model file: weight block header mismatch at layer " + std::to_string(k));
        for (std::size_t n = 0; n < l.outputs * l.inputs; ++n) l.weights.push_back(number());
        expect("biases");
        if (count() != k || count() != l.outputs)
            throw ConfigError("model file: bias block header mismatch at layer " + std::to_string(k));
        for (std::size_t n = 0; n < l.outputs; ++n) l.biases.push_back(number());
        net.layers.push_back(std::move(l));
    }
    return net;
}

} // namespace pvmppt
