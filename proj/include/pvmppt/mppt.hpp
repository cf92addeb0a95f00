#pragma once

// Scalar-decision MPPT algorithms: perturb and observe, particle swarm,
// cuckoo search with Levy flights, and zone-restricted perturb and observe.
// Each algorithm is a set of pure transition functions over a state value;
// the controller classes at the bottom adapt them to the closed loop, where
// candidates are evaluated one at a time on the plant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pvmppt/error.hpp"

namespace pvmppt {

using Rng = std::mt19937_64;

struct Bounds {
    double lo = 0.0;
    double hi = 1.0;

    double clamp(double x) const { return std::clamp(x, lo, hi); }
    bool contains(double x) const { return x >= lo && x <= hi; }
    double width() const { return hi - lo; }
    double mid() const { return 0.5 * (lo + hi); }
};

/// What a decision value means to the plant.
enum class DecisionSpace { Duty, Voltage };

inline std::string_view to_string(DecisionSpace s) { return s == DecisionSpace::Duty ? "duty" : "voltage"; }

struct Measurement {
    double v = 0.0;
    double i = 0.0;
    double p = 0.0;
    double t = 0.0;
};

/// Best decision found so far and its measured power.
struct Incumbent {
    double position = 0.0;
    double power = -std::numeric_limits<double>::infinity();
};

using Objective = std::function<double(double)>;

/// Deterministic stratified placement: n points at the centres of n equal
/// cells of the interval, or uniform random when requested.
inline std::vector<double> initial_positions(std::size_t n, const Bounds& b, bool random, Rng& rng) {
    std::vector<double> x(n);
    std::uniform_real_distribution<double> unif(b.lo, b.hi);
    for (std::size_t k = 0; k < n; ++k)
        x[k] = random ? unif(rng) : b.lo + b.width() * (static_cast<double>(k) + 0.5) / static_cast<double>(n);
    return x;
}

// ---------------------------------------------------------------------------
// Cuckoo search

struct CsParams {
    std::size_t n = 4;
    double k_levy = 0.8;
    double beta = 1.5;
    double gamma0 = 1.0;
    double p_abandon = 0.0;
    Bounds bounds{};
    bool random_init = false;
};

inline void validate(const CsParams& p) {
    if (p.n < 2) throw ConfigError("cs: need at least 2 nests");
    if (!(p.beta > 1.0 && p.beta <= 2.0)) throw ConfigError("cs: beta must lie in (1, 2]");
    if (!(p.k_levy > 0)) throw ConfigError("cs: Levy multiplier must be positive");
    if (!(p.gamma0 > 0)) throw ConfigError("cs: gamma0 must be positive");
    if (!(p.p_abandon >= 0 && p.p_abandon < 1)) throw ConfigError("cs: p_abandon must lie in [0, 1)");
    if (!(p.bounds.lo < p.bounds.hi)) throw ConfigError("cs: empty decision bounds");
}

/// Mantegna scale of the numerator draw for a Levy exponent beta.
inline double sigma_u(double beta) {
    if (!(beta > 1.0 && beta <= 2.0)) throw ConfigError("sigma_u: beta must lie in (1, 2]");
    const double num = std::tgamma(1.0 + beta) * std::sin(std::numbers::pi * beta / 2.0);
    const double den = std::tgamma((1.0 + beta) / 2.0) * beta * std::pow(2.0, (beta - 1.0) / 2.0);
    return std::pow(num / den, 1.0 / beta);
}

struct LevyDraw {
    double u = 0.0;
    double v = 0.0;
};

/// Normal draws behind one Levy step. v is redrawn while |v| < 1e-12.
inline LevyDraw draw_levy(Rng& rng, double beta) {
    std::normal_distribution<double> nu(0.0, sigma_u(beta));
    std::normal_distribution<double> nv(0.0, 1.0);
    LevyDraw d;
    d.u = nu(rng);
    do { d.v = nv(rng); } while (std::abs(d.v) < 1e-12);
    return d;
}

inline double levy_increment(const CsParams& p, const LevyDraw& d, double x_best, double x_i) {
    return p.gamma0 * p.k_levy * (d.u / std::pow(std::abs(d.v), 1.0 / p.beta)) * (x_best - x_i);
}

/// Step of sample x_i scaled by its distance to the best sample.
inline double levy_step(Rng& rng, const CsParams& p, double x_best, double x_i) {
    return levy_increment(p, draw_levy(rng, p.beta), x_best, x_i);
}

struct NestState {
    std::vector<double> positions;
    std::vector<double> powers;
    Incumbent best;
    std::size_t iteration = 0;
};

/// Candidate positions for one cuckoo iteration. When abandonment fires the
/// worst nest is listed in `reseeded` and its candidate is a fresh uniform
/// draw that replaces it unconditionally.
struct CsProposal {
    std::vector<double> candidates;
    std::optional<std::size_t> reseeded;
};

inline NestState cs_start(const CsParams& p, Rng& rng) {
    validate(p);
    NestState s;
    s.positions = initial_positions(p.n, p.bounds, p.random_init, rng);
    return s;
}

/// Records the first evaluation of every nest.
inline NestState cs_seed(NestState s, std::span<const double> powers) {
    if (powers.size() != s.positions.size()) throw ConfigError("cs_seed: one power per nest required");
    s.powers.assign(powers.begin(), powers.end());
    for (std::size_t k = 0; k < s.positions.size(); ++k)
        if (s.powers[k] > s.best.power) s.best = {s.positions[k], s.powers[k]};
    return s;
}

inline CsProposal cs_propose(const NestState& s, const CsParams& p, Rng& rng) {
    CsProposal out;
    out.candidates.resize(s.positions.size());
    for (std::size_t k = 0; k < s.positions.size(); ++k) {
        const double x = s.positions[k];
        out.candidates[k] = p.bounds.clamp(x + levy_step(rng, p, s.best.position, x));
    }
    if (p.p_abandon > 0) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        if (unit(rng) < p.p_abandon) {
            const auto worst = static_cast<std::size_t>(
                std::min_element(s.powers.begin(), s.powers.end()) - s.powers.begin());
            std::uniform_real_distribution<double> unif(p.bounds.lo, p.bounds.hi);
            out.candidates[worst] = unif(rng);
            out.reseeded = worst;
        }
    }
    return out;
}

/// Greedy replacement: a nest moves only when its candidate evaluates better.
inline NestState cs_accept(NestState s, const CsProposal& proposal, std::span<const double> powers) {
    if (powers.size() != s.positions.size()) throw ConfigError("cs_accept: one power per nest required");
    for (std::size_t k = 0; k < s.positions.size(); ++k) {
        if (powers[k] > s.powers[k] || proposal.reseeded == k) {
            s.positions[k] = proposal.candidates[k];
            s.powers[k] = powers[k];
        }
        if (powers[k] > s.best.power) s.best = {proposal.candidates[k], powers[k]};
    }
    ++s.iteration;
    return s;
}

/// Initial placement and evaluation of all nests.
inline NestState cs_init(const CsParams& p, const Objective& evaluate, Rng& rng) {
    NestState s = cs_start(p, rng);
    std::vector<double> powers;
    for (double x : s.positions) powers.push_back(evaluate(x));
    return cs_seed(std::move(s), powers);
}

inline NestState cs_iterate(const NestState& s, const CsParams& p, const Objective& evaluate, Rng& rng) {
    for (double x : s.positions)
        if (!p.bounds.contains(x)) throw ConfigError("cs_iterate: nest outside bounds");
    const CsProposal proposal = cs_propose(s, p, rng);
    std::vector<double> powers;
    for (double x : proposal.candidates) powers.push_back(evaluate(x));
    return cs_accept(s, proposal, powers);
}

// ---------------------------------------------------------------------------
// Particle swarm

struct PsoParams {
    std::size_t n = 3;
    double w = 0.3;
    double alpha1 = 1.2;
    double alpha2 = 1.2;
    Bounds bounds{0.05, 0.95};
    bool random_init = false;
};

/// Throws on hard violations; returns advisory warnings.
inline std::vector<std::string> validate(const PsoParams& p) {
    if (p.n < 2) throw ConfigError("pso: need at least 2 particles");
    if (!(p.alpha1 > 0 && p.alpha2 > 0)) throw ConfigError("pso: acceleration constants must be positive");
    if (p.alpha1 + p.alpha2 > 4.0) throw ConfigError("pso: alpha1 + alpha2 must not exceed 4");
    if (!(p.w > 0 && p.w < 1)) throw ConfigError("pso: inertia weight must lie in (0, 1)");
    if (!(p.bounds.lo < p.bounds.hi)) throw ConfigError("pso: empty decision bounds");
    std::vector<std::string> warnings;
    if (p.w < 0.4 || p.w > 0.9) warnings.push_back("pso: inertia weight outside the customary [0.4, 0.9]");
    return warnings;
}

struct SwarmState {
    std::vector<double> positions;
    std::vector<double> velocities;
    std::vector<Incumbent> p_best;
    Incumbent g_best;
    std::size_t iteration = 0;
};

inline SwarmState pso_start(const PsoParams& p, Rng& rng) {
    validate(p);
    SwarmState s;
    s.positions = initial_positions(p.n, p.bounds, p.random_init, rng);
    s.velocities.assign(p.n, 0.0);
    s.p_best.assign(p.n, Incumbent{});
    return s;
}

/// Folds one evaluation per particle into the personal and global bests.
inline SwarmState pso_record(SwarmState s, std::span<const double> powers) {
    if (powers.size() != s.positions.size()) throw ConfigError("pso: one power per particle required");
    for (std::size_t k = 0; k < s.positions.size(); ++k) {
        if (powers[k] > s.p_best[k].power) s.p_best[k] = {s.positions[k], powers[k]};
        if (powers[k] > s.g_best.power) s.g_best = {s.positions[k], powers[k]};
    }
    return s;
}

/// Velocity and position update; a clamped particle loses its velocity.
/// r1 and r2 are drawn once per iteration and shared by the swarm.
inline SwarmState pso_move(SwarmState s, const PsoParams& p, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double r1 = unit(rng);
    const double r2 = unit(rng);
    for (std::size_t k = 0; k < s.positions.size(); ++k) {
        const double x = s.positions[k];
        double v = p.w * s.velocities[k] + r1 * p.alpha1 * (s.p_best[k].position - x) +
                   r2 * p.alpha2 * (s.g_best.position - x);
        double next = x + v;
        if (!p.bounds.contains(next)) {
            next = p.bounds.clamp(next);
            v = 0.0;
        }
        s.positions[k] = next;
        s.velocities[k] = v;
    }
    return s;
}

inline SwarmState pso_init(const PsoParams& p, const Objective& evaluate, Rng& rng) {
    SwarmState s = pso_start(p, rng);
    std::vector<double> powers;
    for (double x : s.positions) powers.push_back(evaluate(x));
    return pso_record(std::move(s), powers);
}

inline SwarmState pso_iterate(const SwarmState& s, const PsoParams& p, const Objective& evaluate, Rng& rng) {
    for (double x : s.positions)
        if (!p.bounds.contains(x)) throw ConfigError("pso_iterate: particle outside bounds");
    SwarmState next = pso_move(s, p, rng);
    std::vector<double> powers;
    for (double x : next.positions) powers.push_back(evaluate(x));
    next = pso_record(std::move(next), powers);
    ++next.iteration;
    return next;
}

// ---------------------------------------------------------------------------
// Perturb and observe

struct PoParams {
    double step = 0.005;
    Bounds bounds{0.05, 0.95};
};

inline void validate(const PoParams& p) {
    if (!(p.step > 0)) throw ConfigError("po: step must be positive");
    if (!(p.bounds.lo <= p.bounds.hi)) throw ConfigError("po: empty decision bounds");
}

struct PoMove {
    double next;
    int dir;
};

/// Keep direction while power does not drop, reverse otherwise.
inline PoMove po_step(const Measurement& prev, const Measurement& curr, double decision, int dir,
                      const PoParams& p) {
    const int d = (curr.p - prev.p >= 0) ? (dir >= 0 ? 1 : -1) : (dir >= 0 ? -1 : 1);
    return {p.bounds.clamp(decision + d * p.step), d};
}

struct Zone {
    double v_min = 0.0;
    double v_max = 0.0;

    bool operator==(const Zone&) const = default;
};

inline void validate(const Zone& z, double string_voc) {
    if (!(z.v_min <= z.v_max)) throw ConfigError("zone: v_min exceeds v_max");
    if (!(z.v_min >= 0 && z.v_max <= string_voc))
        throw ConfigError("zone: [" + std::to_string(z.v_min) + ", " + std::to_string(z.v_max) +
                          "] V lies outside the string voltage range [0, " + std::to_string(string_voc) + "] V");
}

struct HybridState {
    double reference = 0.0;
    int dir = 1;
    bool started = false;
};

/// P&O on the voltage reference confined to the predicted zone. The first
/// call places the reference at the zone midpoint.
inline HybridState hybrid_step(HybridState s, const Zone& zone, const Measurement& prev, const Measurement& curr,
                               const PoParams& p) {
    const PoParams in_zone{p.step, Bounds{zone.v_min, zone.v_max}};
    if (!s.started) return {in_zone.bounds.mid(), 1, true};
    const PoMove m = po_step(prev, curr, s.reference, s.dir, in_zone);
    return {m.next, m.dir, true};
}

// ---------------------------------------------------------------------------
// Closed-loop controllers

/// One evaluated candidate, for per-iteration logs.
struct EvaluationRecord {
    std::size_t iteration;
    double candidate;
    double power;
    double incumbent;
};

struct Command {
    DecisionSpace space;
    double value;
};

/// Stop rule for population methods: best power improved by less than
/// `tolerance` (relative) for `patience` consecutive iterations, or the
/// iteration cap was reached. The incumbent is then held until its measured
/// power moves by more than `restart_threshold` (relative; 0 never restarts).
struct StopRule {
    double tolerance = 1e-3;
    std::size_t patience = 10;
    std::size_t max_iterations = 100;
    double restart_threshold = 0.1;
};

class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string_view name() const = 0;
    /// Command applied before any measurement exists.
    virtual Command first() = 0;
    /// Measurement of the last command settles; returns the next command.
    virtual Command next(const Measurement& m) = 0;
    virtual bool finished() const { return false; }
    const std::vector<EvaluationRecord>& log() const { return log_; }

protected:
    std::vector<EvaluationRecord> log_;
};

namespace detail {

class StopTracker {
public:
    explicit StopTracker(StopRule rule) : rule_(rule) {}

    /// Call once per completed iteration with the incumbent power.
    bool update(double best, std::size_t iteration) {
        if (std::isfinite(last_) && best - last_ < rule_.tolerance * std::abs(last_)) ++stale_; else stale_ = 0;
        last_ = best;
        return stale_ >= rule_.patience || iteration >= rule_.max_iterations;
    }

    bool restart(double held, double best) const {
        return rule_.restart_threshold > 0 && std::abs(held - best) > rule_.restart_threshold * std::abs(best);
    }

    void reset() {
        last_ = std::numeric_limits<double>::quiet_NaN();
        stale_ = 0;
    }

private:
    StopRule rule_;
    double last_ = std::numeric_limits<double>::quiet_NaN();
    std::size_t stale_ = 0;
};

} // namespace detail

class CuckooController final : public Controller {
public:
    CuckooController(CsParams params, DecisionSpace space, std::uint64_t seed, StopRule stop = {})
        : params_(params), space_(space), rng_(seed), stop_(stop) {
        validate(params_);
        state_ = cs_start(params_, rng_);
        pending_ = state_.positions;
    }

    std::string_view name() const override { return "cs"; }
    bool finished() const override { return done_; }
    const NestState& state() const { return state_; }

    Command first() override { return {space_, pending_.front()}; }

    Command next(const Measurement& m) override {
        if (done_) {
            if (!stop_.restart(m.p, state_.best.power)) return {space_, state_.best.position};
            state_ = cs_start(params_, rng_);
            pending_ = state_.positions;
            stop_.reset();
            seeded_ = done_ = false;
            return first();
        }
        const double candidate = pending_[powers_.size()];
        powers_.push_back(m.p);
        log_.push_back({state_.iteration, candidate, m.p, std::max(state_.best.power, m.p)});
        if (powers_.size() < pending_.size()) return {space_, pending_[powers_.size()]};

        if (!seeded_) {
            state_ = cs_seed(std::move(state_), powers_);
            seeded_ = true;
        } else {
            state_ = cs_accept(std::move(state_), proposal_, powers_);
            done_ = stop_.update(state_.best.power, state_.iteration);
        }
        powers_.clear();
        if (done_) return {space_, state_.best.position};
        proposal_ = cs_propose(state_, params_, rng_);
        pending_ = proposal_.candidates;
        return {space_, pending_.front()};
    }

private:
    CsParams params_;
    DecisionSpace space_;
    Rng rng_;
    detail::StopTracker stop_;
    NestState state_;
    CsProposal proposal_;
    std::vector<double> pending_;
    std::vector<double> powers_;
    bool seeded_ = false;
    bool done_ = false;
};

class SwarmController final : public Controller {
public:
    SwarmController(PsoParams params, DecisionSpace space, std::uint64_t seed, StopRule stop = {})
        : params_(params), space_(space), rng_(seed), stop_(stop) {
        state_ = pso_start(params_, rng_);
    }

    std::string_view name() const override { return "pso"; }
    bool finished() const override { return done_; }
    const SwarmState& state() const { return state_; }

    Command first() override { return {space_, state_.positions.front()}; }

    Command next(const Measurement& m) override {
        if (done_) {
            if (!stop_.restart(m.p, state_.g_best.power)) return {space_, state_.g_best.position};
            state_ = pso_start(params_, rng_);
            stop_.reset();
            started_ = done_ = false;
            return first();
        }
        const double candidate = state_.positions[powers_.size()];
        powers_.push_back(m.p);
        log_.push_back({state_.iteration, candidate, m.p, std::max(state_.g_best.power, m.p)});
        if (powers_.size() < state_.positions.size()) return {space_, state_.positions[powers_.size()]};

        state_ = pso_record(std::move(state_), powers_);
        powers_.clear();
        if (started_) done_ = stop_.update(state_.g_best.power, state_.iteration);
        started_ = true;
        if (done_) return {space_, state_.g_best.position};
        state_ = pso_move(std::move(state_), params_, rng_);
        ++state_.iteration;
        return {space_, state_.positions.front()};
    }

private:
    PsoParams params_;
    DecisionSpace space_;
    Rng rng_;
    detail::StopTracker stop_;
    SwarmState state_;
    std::vector<double> powers_;
    bool started_ = false;
    bool done_ = false;
};

/// Classical hill climbing, in either decision space.
class PerturbObserveController final : public Controller {
public:
    PerturbObserveController(PoParams params, DecisionSpace space, double start, int dir = 1)
        : params_(params), space_(space), decision_(params.bounds.clamp(start)), dir_(dir >= 0 ? 1 : -1) {
        validate(params_);
    }

    std::string_view name() const override { return "po"; }
    Command first() override { return {space_, decision_}; }

    Command next(const Measurement& m) override {
        log_.push_back({log_.size(), decision_, m.p, m.p});
        if (have_prev_) {
            const PoMove move = po_step(prev_, m, decision_, dir_, params_);
            decision_ = move.next;
            dir_ = move.dir;
        } else {
            decision_ = params_.bounds.clamp(decision_ + dir_ * params_.step);
        }
        prev_ = m;
        have_prev_ = true;
        return {space_, decision_};
    }

    double decision() const { return decision_; }

private:
    PoParams params_;
    DecisionSpace space_;
    double decision_;
    int dir_;
    Measurement prev_{};
    bool have_prev_ = false;
};

/// Voltage-reference P&O restricted to a predicted zone.
class HybridController final : public Controller {
public:
    HybridController(Zone zone, PoParams params) : zone_(zone), params_(params) {
        validate(params_);
        if (!(zone_.v_min <= zone_.v_max)) throw ConfigError("hybrid: v_min exceeds v_max");
        state_ = hybrid_step(state_, zone_, {}, {}, params_);
    }

    std::string_view name() const override { return "hybrid"; }
    const Zone& zone() const { return zone_; }
    Command first() override { return {DecisionSpace::Voltage, state_.reference}; }

    Command next(const Measurement& m) override {
        log_.push_back({log_.size(), state_.reference, m.p, m.p});
        if (have_prev_) {
            state_ = hybrid_step(state_, zone_, prev_, m, params_);
        } else {
            // No slope information yet: probe one step in the initial direction.
            state_.reference = std::clamp(state_.reference + state_.dir * params_.step, zone_.v_min, zone_.v_max);
        }
        prev_ = m;
        have_prev_ = true;
        return {DecisionSpace::Voltage, state_.reference};
    }

private:
    Zone zone_;
    PoParams params_;
    HybridState state_;
    Measurement prev_{};
    bool have_prev_ = false;
};

} // namespace pvmppt
