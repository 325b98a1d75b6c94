#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ptcbf/dynamics.hpp"
#include "ptcbf/errors.hpp"
#include "ptcbf/fuel_model.hpp"
#include "ptcbf/safety.hpp"

namespace ptcbf {

struct CycleSample {
    double time_s = 0.0;
    double speed_m_s = 0.0;
};

/// Piecewise-linear lead speed profile.
struct DriveCycle {
    std::string name;
    std::vector<CycleSample> samples;

    double duration() const { return samples.empty() ? 0.0 : samples.back().time_s; }

    void validate() const {
        if (samples.size() < 2) throw ConfigError("cycle '" + name + "': needs at least two samples");
        if (samples.front().time_s != 0.0) throw ConfigError("cycle '" + name + "': must start at t=0");
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!(samples[i].speed_m_s >= 0.0)) throw ConfigError("cycle '" + name + "': negative speed");
            if (i > 0 && !(samples[i].time_s > samples[i - 1].time_s))
                throw ConfigError("cycle '" + name + "': time not strictly increasing");
        }
    }
};

struct LeadKinematics {
    double speed_m_s = 0.0;
    double accel_m_s2 = 0.0;
};

/// Interpolated lead speed and its slope. At an interior sample point the
/// slope is the mean of the two adjacent segment slopes.
inline LeadKinematics lead_state_at(const DriveCycle& c, double t) {
    if (c.samples.size() < 2) throw OutOfRange("cycle has fewer than two samples");
    if (t < 0.0 || t > c.duration()) throw OutOfRange("time " + std::to_string(t) + " outside cycle '" + c.name + "'");
    const auto& s = c.samples;
    auto it = std::upper_bound(s.begin(), s.end(), t, [](double x, const CycleSample& cs) { return x < cs.time_s; });
    std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - s.begin()), s.size() - 1);
    std::size_t lo = hi - 1;
    if (hi == 0) {
        lo = 0;
        hi = 1;
    }
    auto slope = [&](std::size_t i) { return (s[i + 1].speed_m_s - s[i].speed_m_s) / (s[i + 1].time_s - s[i].time_s); };
    const double w = (t - s[lo].time_s) / (s[hi].time_s - s[lo].time_s);
    LeadKinematics k;
    k.speed_m_s = s[lo].speed_m_s + w * (s[hi].speed_m_s - s[lo].speed_m_s);
    k.accel_m_s2 = slope(lo);
    if (t == s[lo].time_s && lo > 0) {
        k.speed_m_s = s[lo].speed_m_s;
        k.accel_m_s2 = 0.5 * (slope(lo - 1) + slope(lo));
    } else if (t == s[hi].time_s) {
        k.speed_m_s = s[hi].speed_m_s;
        if (hi + 1 < s.size()) k.accel_m_s2 = 0.5 * (slope(lo) + slope(hi));
    }
    return k;
}

inline DriveCycle parse_cycle_csv(std::istream& in, const std::string& name, const std::string& path = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw IoError(path, "empty drive cycle");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);   // UTF-8 BOM
    if (line != "time_s,speed_m_s") throw IoError(path, "unexpected header '" + line + "'");
    DriveCycle c;
    c.name = name;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 2) throw IoError(path, "line " + std::to_string(line_no) + ": expected 2 columns");
        c.samples.push_back({detail::parse_double(cells[0], path, line_no), detail::parse_double(cells[1], path, line_no)});
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw IoError(path, e.what());
    }
    return c;
}

inline DriveCycle load_cycle_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open drive cycle");
    return parse_cycle_csv(in, path, path);
}

// ---------------------------------------------------------------------------
// Intelligent driver model

struct IdmParams {
    double desired_speed_m_s = 30.0;
    double time_headway_s = 1.5;
    double min_gap_m = 2.0;
    double max_accel_m_s2 = 1.5;
    double comfort_decel_m_s2 = 2.0;
    double accel_exponent = 4.0;

    void validate() const {
        if (!(desired_speed_m_s > 0 && time_headway_s > 0 && min_gap_m > 0 && max_accel_m_s2 > 0 &&
              comfort_decel_m_s2 > 0 && accel_exponent > 0))
            throw ConfigError("idm: all parameters must be positive");
    }
};

inline constexpr double kIdmMinAccel = -4.0;
inline constexpr double kIdmMaxAccel = 3.0;

/// Desired acceleration; `lead_present == false` uses the free-road term only.
inline double idm_acceleration(double gap_m, double host_speed_m_s, double lead_speed_m_s, bool lead_present,
                               const IdmParams& p) {
    const double v = std::max(host_speed_m_s, 0.0);
    double a = 1.0 - std::pow(v / p.desired_speed_m_s, p.accel_exponent);
    if (lead_present) {
        const double dyn = v * p.time_headway_s +
                           v * (v - lead_speed_m_s) / (2.0 * std::sqrt(p.max_accel_m_s2 * p.comfort_decel_m_s2));
        const double s_star = p.min_gap_m + std::max(0.0, dyn);
        const double s = std::max(gap_m, 1e-3);
        a -= (s_star / s) * (s_star / s);
    }
    return std::clamp(p.max_accel_m_s2 * a, kIdmMinAccel, kIdmMaxAccel);
}

inline double idm_acceleration(const SimState& s, const IdmParams& p, double radar_range_m = 150.0) {
    return idm_acceleration(s.separation_m, s.host_speed_m_s, s.lead_speed_m_s, s.separation_m <= radar_range_m, p);
}

// ---------------------------------------------------------------------------
// Synthetic cycles

enum class CycleKind { urban, highway, sawtooth };

inline const char* to_string(CycleKind k) {
    switch (k) {
        case CycleKind::urban: return "urban";
        case CycleKind::highway: return "highway";
        case CycleKind::sawtooth: return "sawtooth";
    }
    return "?";
}

namespace detail {

struct CycleBuilder {
    std::vector<CycleSample> s{{0.0, 0.0}};
    double t() const { return s.back().time_s; }
    double v() const { return s.back().speed_m_s; }
    void hold(double dur) { s.push_back({t() + dur, v()}); }
    void ramp(double to, double rate) {
        const double dur = std::abs(to - v()) / rate;
        if (dur > 0.0) s.push_back({t() + dur, to});
    }
    /// Truncates (interpolating the last segment) at `end`.
    DriveCycle finish(const std::string& name, double end) {
        DriveCycle c;
        c.name = name;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i].time_s < end) {
                c.samples.push_back(s[i]);
                continue;
            }
            const auto& a = s[i - 1];
            const double w = (end - a.time_s) / (s[i].time_s - a.time_s);
            c.samples.push_back({end, a.speed_m_s + w * (s[i].speed_m_s - a.speed_m_s)});
            break;
        }
        if (c.samples.back().time_s < end) c.samples.push_back({end, c.samples.back().speed_m_s});
        return c;
    }
};

} // namespace detail

/// Deterministic synthetic lead cycles standing in for certification cycles.
/// Urban: stop-and-go trips up to 20 m/s. Highway: cruise between 22 and 33 m/s.
/// Sawtooth: 0 -> 15 -> 0 m/s ramps with a 20 s period.
inline DriveCycle synthesize_cycle(CycleKind kind, double duration_s, std::uint64_t seed) {
    if (!(duration_s > 0)) throw OutOfRange("cycle duration must be positive");
    std::mt19937_64 rng(seed);
    auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    detail::CycleBuilder b;
    const std::string name = std::string(to_string(kind)) + "-" + std::to_string(seed);
    switch (kind) {
        case CycleKind::sawtooth:
            while (b.t() < duration_s) {
                b.ramp(15.0, 1.5);
                b.ramp(0.0, 1.5);
            }
            break;
        case CycleKind::urban:
            b.hold(uni(3.0, 8.0));
            while (b.t() < duration_s) {
                const double cruise = uni(8.0, 20.0);
                b.ramp(cruise, uni(0.6, 1.2));
                for (int k = static_cast<int>(uni(0.0, 3.0)); k > 0; --k) {
                    b.hold(uni(5.0, 20.0));
                    b.ramp(std::clamp(b.v() + uni(-5.0, 5.0), 6.0, 20.0), uni(0.4, 0.9));
                }
                b.hold(uni(5.0, 25.0));
                b.ramp(0.0, uni(0.6, 1.5));
                b.hold(uni(5.0, 20.0));
            }
            break;
        case CycleKind::highway:
            b.ramp(uni(25.0, 30.0), uni(0.5, 0.8));
            while (b.t() < duration_s) {
                b.hold(uni(20.0, 60.0));
                b.ramp(uni(22.0, 33.0), uni(0.2, 0.5));
            }
            break;
    }
    return b.finish(name, duration_s);
}

// ---------------------------------------------------------------------------
// Episode randomization

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct RandomizationSpec {
    double speed_noise_std_m_s = 0.3;
    Range initial_gap_range_m{10.0, 60.0};
    Range grade_range_rad{-0.02, 0.02};
    Range mass_range_kg{5000.0, 12000.0};
    double idm_jitter_fraction = 0.1;
    std::uint64_t seed = 1;
    /// Episode start offset into the cycle.
    Range start_offset_s{0.0, 0.0};
    /// Mean rate of injected maximum-deceleration lead braking events.
    double hard_brake_rate_per_min = 0.0;
    Range hard_brake_duration_s{2.0, 8.0};

    void validate() const {
        auto check = [](const Range& r, const char* what) {
            if (!(r.lo <= r.hi)) throw ConfigError(std::string("randomization: ") + what + " range inverted");
        };
        check(initial_gap_range_m, "initial_gap");
        check(grade_range_rad, "grade");
        check(mass_range_kg, "mass");
        check(start_offset_s, "start_offset");
        check(hard_brake_duration_s, "hard_brake_duration");
        if (!(speed_noise_std_m_s >= 0)) throw ConfigError("randomization: negative speed noise");
        if (!(idm_jitter_fraction >= 0 && idm_jitter_fraction < 1)) throw ConfigError("randomization: idm jitter in [0,1)");
        if (!(mass_range_kg.lo > 0)) throw ConfigError("randomization: mass must be positive");
        if (!(initial_gap_range_m.lo > 0)) throw ConfigError("randomization: initial gap must be positive");
        if (!(hard_brake_rate_per_min >= 0)) throw ConfigError("randomization: negative brake rate");
    }
};

struct BrakeEvent {
    double start_s = 0.0;
    double duration_s = 0.0;
};

struct EpisodeSetup {
    DriveCycle cycle;
    SimState initial;
    VehicleParams vehicle;
    IdmParams idm;
    double start_time_s = 0.0;
    std::vector<BrakeEvent> brake_events;
};

/// Per-episode generator; a pure function of (seed, episode index).
inline std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t episode_index, std::uint64_t salt = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(episode_index), static_cast<std::uint32_t>(episode_index >> 32),
                      static_cast<std::uint32_t>(salt)};
    return std::mt19937_64(seq);
}

/// Highest gear keeping the engine at or above `min_rpm`, else first gear.
inline int launch_gear(double host_speed_m_s, const VehicleParams& p, double min_rpm) {
    int best = 0;
    for (int g = 0; g < p.gear_count(); ++g)
        if (engine_speed_rpm(host_speed_m_s, p, g) >= min_rpm) best = g;
    return best;
}

/// Checks initial-state membership in C0, C1 and C2 (with braking available)
/// under worst-case lead braking.
inline bool initial_state_admissible(const SimState& s, const VehicleParams& p, const SafetyConfig& cfg,
                                     FilterKind kind) {
    if (kind == FilterKind::none) return s.separation_m >= cfg.z0_m;
    SafetyConfig worst = cfg;
    worst.lead_accel_mode = LeadAccelMode::worst_case;
    const BarrierEval be = eval_barrier(s, 0.0, p, worst, kind);
    return be.v0 >= 0.0 && be.v1 >= 0.0 && be.v2(-p.max_brake_torque_nm) >= 0.0;
}

using AdmissibilityCheck = std::function<bool(const SimState&, const VehicleParams&)>;

/// Draws one randomized episode. Initial states are rejection-sampled until
/// `admissible` accepts them.
inline EpisodeSetup randomize_episode(const RandomizationSpec& spec, const DriveCycle& base,
                                      std::uint64_t episode_index, const VehicleParams& base_vehicle,
                                      const IdmParams& base_idm, const AdmissibilityCheck& admissible) {
    spec.validate();
    base.validate();
    auto rng = episode_rng(spec.seed, episode_index);
    auto uni = [&rng](const Range& r) {
        return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
    };

    EpisodeSetup e;
    e.cycle = base;
    if (spec.speed_noise_std_m_s > 0.0) {
        // AR(1) noise on a 1 s grid, faded out near standstill.
        std::normal_distribution<double> n01(0.0, 1.0);
        const double phi = 0.9;
        DriveCycle noisy;
        noisy.name = base.name + "+noise";
        double n = 0.0;
        const int steps = static_cast<int>(std::floor(base.duration()));
        for (int k = 0; k <= steps; ++k) {
            const double t = static_cast<double>(k);
            n = phi * n + std::sqrt(1.0 - phi * phi) * spec.speed_noise_std_m_s * n01(rng);
            const double v = lead_state_at(base, t).speed_m_s;
            noisy.samples.push_back({t, std::max(0.0, v + n * std::min(1.0, v))});
        }
        if (noisy.samples.back().time_s < base.duration())
            noisy.samples.push_back({base.duration(), base.samples.back().speed_m_s});
        e.cycle = std::move(noisy);
    }

    e.vehicle = base_vehicle;
    e.vehicle.mass_kg = uni(spec.mass_range_kg);
    e.idm = base_idm;
    const double j = spec.idm_jitter_fraction;
    const Range jit{1.0 - j, 1.0 + j};
    e.idm.desired_speed_m_s *= uni(jit);
    e.idm.time_headway_s *= uni(jit);
    e.idm.min_gap_m *= uni(jit);
    e.idm.max_accel_m_s2 *= uni(jit);
    e.idm.comfort_decel_m_s2 *= uni(jit);

    e.start_time_s = std::min(uni(spec.start_offset_s), std::max(0.0, e.cycle.duration() - 1.0));
    const double grade = uni(spec.grade_range_rad);
    const double lead_speed = lead_state_at(e.cycle, e.start_time_s).speed_m_s;

    int attempts = 0;
    for (;;) {
        if (++attempts > 1000) throw InitSamplingExhausted("no admissible initial state after 1000 draws");
        SimState s;
        s.separation_m = uni(spec.initial_gap_range_m);
        s.lead_speed_m_s = lead_speed;
        s.host_speed_m_s = lead_speed * uni(Range{0.8, 1.2});
        s.grade_rad = grade;
        s.gear_index = launch_gear(s.host_speed_m_s, e.vehicle, 1000.0);
        s.time_s = e.start_time_s;
        if (admissible(s, e.vehicle)) {
            e.initial = s;
            break;
        }
    }

    if (spec.hard_brake_rate_per_min > 0.0) {
        std::exponential_distribution<double> gap_dist(spec.hard_brake_rate_per_min / 60.0);
        double t = e.start_time_s + gap_dist(rng);
        while (t < e.cycle.duration()) {
            const double dur = uni(spec.hard_brake_duration_s);
            e.brake_events.push_back({t, dur});
            t += dur + gap_dist(rng);
        }
    }
    return e;
}

inline EpisodeSetup randomize_episode(const RandomizationSpec& spec, const DriveCycle& base,
                                      std::uint64_t episode_index, const VehicleParams& base_vehicle,
                                      const IdmParams& base_idm, const SafetyConfig& safety, FilterKind kind) {
    return randomize_episode(spec, base, episode_index, base_vehicle, base_idm,
                             [&](const SimState& s, const VehicleParams& p) {
                                 return initial_state_admissible(s, p, safety, kind);
                             });
}

/// Lead vehicle that tracks its cycle with bounded acceleration and brakes at
/// the maximum rate during injected events.
struct LeadController {
    double max_decel_m_s2 = 2.0;
    double max_accel_m_s2 = 2.0;

    double accel(const DriveCycle& cycle, const std::vector<BrakeEvent>& events, double t, double lead_speed,
                 double dt) const {
        for (const auto& ev : events)
            if (t >= ev.start_s && t < ev.start_s + ev.duration_s) return lead_speed > 0.0 ? -max_decel_m_s2 : 0.0;
        const double target = lead_state_at(cycle, std::min(t + dt, cycle.duration())).speed_m_s;
        double a = std::clamp((target - lead_speed) / dt, -max_decel_m_s2, max_accel_m_s2);
        if (lead_speed + a * dt < 0.0) a = -lead_speed / dt;
        return a;
    }
};

} // namespace ptcbf
