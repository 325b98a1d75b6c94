#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ptcbf/dynamics.hpp"
#include "ptcbf/errors.hpp"

namespace ptcbf {

// All decelerations in this module are positive magnitudes.

enum class FilterKind { hocbf, ecbf, none };
enum class LeadAccelMode { measured, worst_case };
enum class Region { region1, region2 };

/// How the region-2 first-level term is built: v1 = v_l - v_l,min from the
/// worst-case braking condition at the current speeds, or the envelope of the
/// limiting relative velocity over host speeds (a function of the gap alone).
enum class Region2Form { exact, gap_envelope };

inline const char* to_string(FilterKind k) {
    switch (k) {
        case FilterKind::hocbf: return "hocbf";
        case FilterKind::ecbf: return "ecbf";
        case FilterKind::none: return "none";
    }
    return "?";
}

inline const char* to_string(Region r) { return r == Region::region1 ? "region1" : "region2"; }

inline const char* to_string(Region2Form f) { return f == Region2Form::exact ? "exact" : "gap_envelope"; }

struct SafetyConfig {
    double z0_m = 2.0;
    double a_host_max_m_s2 = 2.27;
    double a_lead_max_m_s2 = 2.0;
    double v_host_max_m_s = 40.0;
    double alpha2_gain = 2.0;
    double ecbf_k1 = 0.1;
    double ecbf_k2 = 1.1;
    double singularity_eps = 1e-3;
    LeadAccelMode lead_accel_mode = LeadAccelMode::measured;
    Region2Form region2_form = Region2Form::exact;
    /// Evaluate d(v1)/dt as the one-step difference of the sampled plant
    /// instead of the continuous-time derivative.
    bool sampled_data = true;
    /// Beyond this separation the lead is not observed; the filter then guards
    /// against a stopped obstacle at the edge of the radar range.
    double radar_range_m = 150.0;

    double decel_ratio() const { return a_lead_max_m_s2 / a_host_max_m_s2; }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("safety: " + m); };
        if (!(z0_m >= 0)) fail("z0_m must be non-negative");
        if (!(a_host_max_m_s2 > 0)) fail("a_host_max_m_s2 must be positive");
        if (!(a_lead_max_m_s2 > 0)) fail("a_lead_max_m_s2 must be positive");
        if (!(v_host_max_m_s > 0)) fail("v_host_max_m_s must be positive");
        if (!(alpha2_gain > 0)) fail("alpha2_gain must be positive");
        if (!(singularity_eps > 0)) fail("singularity_eps must be positive");
        if (!(ecbf_k1 >= 0 && ecbf_k2 >= 0)) fail("ECBF gains must be non-negative");
        if (!(radar_range_m > z0_m)) fail("radar_range_m must exceed z0_m");
    }
};

struct BarrierEval {
    double v0 = 0.0;
    double v1 = 0.0;
    double v2_at_zero_torque = 0.0;
    double torque_coeff = 0.0;
    Region region = Region::region1;
    /// Bound computed directly when v2 is not affine in torque; NaN otherwise.
    double exact_torque_bound = std::numeric_limits<double>::quiet_NaN();

    double v2(double wheel_torque_nm) const { return v2_at_zero_torque + torque_coeff * wheel_torque_nm; }
    /// Largest torque with v2 >= 0.
    double torque_upper_bound() const {
        if (!std::isnan(exact_torque_bound)) return exact_torque_bound;
        if (torque_coeff < 0.0) return -v2_at_zero_torque / torque_coeff;
        return v2_at_zero_torque >= 0.0 ? std::numeric_limits<double>::infinity()
                                        : -std::numeric_limits<double>::infinity();
    }
};

struct FilterResult {
    double safe_torque_nm = 0.0;
    bool intervened = false;
    bool infeasible = false;
    BarrierEval barrier;
};

// ---------------------------------------------------------------------------
// Safe-set geometry

inline Region classify_region(double gap_m, double host_speed_m_s, const SafetyConfig& cfg) {
    if (gap_m < 0.0) return Region::region2;
    return host_speed_m_s * host_speed_m_s <= 2.0 * cfg.a_host_max_m_s2 * gap_m ? Region::region1 : Region::region2;
}

inline Region classify_region(const SimState& s, const SafetyConfig& cfg) {
    return classify_region(s.separation_m - cfg.z0_m, s.host_speed_m_s, cfg);
}

/// Most negative admissible v_l - v_h when the lead is already stopped.
inline double limiting_rel_velocity_region1(double gap_m, const SafetyConfig& cfg) {
    return -std::sqrt(2.0 * cfg.a_host_max_m_s2 * std::max(gap_m, 0.0));
}

/// Coefficient c in v_h*^2 = c * gap for the host speed at which the region-2
/// relative-velocity requirement peaks. Only meaningful when a_lead < a_host.
inline double region2_stationary_coefficient(const SafetyConfig& cfg) {
    return 2.0 * cfg.a_host_max_m_s2 / (1.0 - cfg.decel_ratio());
}

/// Host speed in [0, v_host_max] where the region-2 requirement
/// sqrt(rho v^2 - 2 a_l gap) - v is largest.
inline double region2_limiting_host_speed(double gap_m, const SafetyConfig& cfg) {
    const double rho = cfg.decel_ratio();
    if (rho >= 1.0) return cfg.v_host_max_m_s;
    return std::min(cfg.v_host_max_m_s, std::sqrt(region2_stationary_coefficient(cfg) * std::max(gap_m, 0.0)));
}

/// Relative velocity v_l - v_h that must be maintained in region 2: the
/// worst case over host speeds of the both-vehicles-brake-to-rest condition
/// v_l^2 >= rho v_h^2 - 2 a_l gap.
inline double limiting_rel_velocity_region2(double gap_m, const SafetyConfig& cfg) {
    const double g = std::max(gap_m, 0.0);
    const double v = region2_limiting_host_speed(g, cfg);
    const double arg = cfg.decel_ratio() * v * v - 2.0 * cfg.a_lead_max_m_s2 * g;
    return std::sqrt(std::max(arg, 0.0)) - v;
}

/// True when, with both vehicles braking at their limits, the lead stops
/// before the speeds equalize; the closest approach is then at standstill.
inline bool stops_before_equalizing(double gap_m, double host_speed_m_s, const SafetyConfig& cfg) {
    if (cfg.decel_ratio() >= 1.0) return true;
    return host_speed_m_s * host_speed_m_s <= region2_stationary_coefficient(cfg) * gap_m;
}

/// Smallest lead speed for which the gap never drops below zero while both
/// vehicles brake at their limits. Zero in region 1.
inline double min_lead_speed(double gap_m, double host_speed_m_s, const SafetyConfig& cfg) {
    if (classify_region(gap_m, host_speed_m_s, cfg) == Region::region1) return 0.0;
    if (gap_m >= 0.0 && !stops_before_equalizing(gap_m, host_speed_m_s, cfg))
        return host_speed_m_s - std::sqrt(2.0 * (cfg.a_host_max_m_s2 - cfg.a_lead_max_m_s2) * gap_m);
    const double arg = cfg.decel_ratio() * host_speed_m_s * host_speed_m_s - 2.0 * cfg.a_lead_max_m_s2 * gap_m;
    return std::sqrt(std::max(arg, 0.0));
}

// ---------------------------------------------------------------------------
// First-level class-K terms

struct Alpha1Value {
    double value = 0.0;
    double derivative = 0.0;     // d alpha1 / d gap
    double d_host_speed = 0.0;   // d alpha1 / d v_h
    double d_lead_speed = 0.0;   // d alpha1 / d v_l
    Region region = Region::region1;
};

/// Region-dependent alpha1: stopping-distance curve in region 1, worst-case
/// lead-braking curve in region 2.
struct TwoRegionAlpha1 {
    SafetyConfig cfg;

    Alpha1Value operator()(double gap_m, double host_speed_m_s, double /*lead_speed_m_s*/) const {
        Alpha1Value out;
        out.region = classify_region(gap_m, host_speed_m_s, cfg);
        const double g = std::max(gap_m, 0.0);
        const double gf = std::max(g, cfg.singularity_eps);
        if (out.region == Region::region1) {
            out.value = -limiting_rel_velocity_region1(g, cfg);
            out.derivative = cfg.a_host_max_m_s2 / std::sqrt(2.0 * cfg.a_host_max_m_s2 * gf);
            return out;
        }
        if (cfg.region2_form == Region2Form::exact && stops_before_equalizing(gap_m, host_speed_m_s, cfg)) {
            // v1 = v_l - sqrt(rho v_h^2 - 2 a_l gap)
            const double rho = cfg.decel_ratio();
            const double vh = std::max(host_speed_m_s, 0.0);
            const double arg = rho * vh * vh - 2.0 * cfg.a_lead_max_m_s2 * gap_m;
            const double root = std::sqrt(std::max(arg, 0.0));
            const double root_f = std::max(root, cfg.singularity_eps);
            out.value = vh - root;
            out.derivative = cfg.a_lead_max_m_s2 / root_f;
            out.d_host_speed = 1.0 - rho * vh / root_f;
            return out;
        }
        out.value = -limiting_rel_velocity_region2(g, cfg);
        // Envelope theorem: the partial in gap at the maximizing host speed.
        const double v = region2_limiting_host_speed(gf, cfg);
        const double arg = cfg.decel_ratio() * v * v - 2.0 * cfg.a_lead_max_m_s2 * gf;
        const double floor_arg = 2.0 * cfg.a_lead_max_m_s2 * cfg.singularity_eps;
        out.derivative = arg > 0.0 ? cfg.a_lead_max_m_s2 / std::sqrt(std::max(arg, floor_arg)) : 0.0;
        return out;
    }
};

/// alpha1(gap) = gain * gap.
struct LinearAlpha1 {
    double gain = 1.0;

    Alpha1Value operator()(double gap_m, double /*host_speed_m_s*/, double /*lead_speed_m_s*/) const {
        return {gain * gap_m, gain, 0.0, 0.0, Region::region1};
    }
};

/// Real roots (p1 <= p2) with p1 * p2 = k1 and p1 + p2 = k2. Complex poles
/// collapse to the real part.
inline std::pair<double, double> ecbf_poles(const SafetyConfig& cfg) {
    const double disc = cfg.ecbf_k2 * cfg.ecbf_k2 - 4.0 * cfg.ecbf_k1;
    const double r = disc > 0.0 ? std::sqrt(disc) : 0.0;
    return {(cfg.ecbf_k2 - r) / 2.0, (cfg.ecbf_k2 + r) / 2.0};
}

// ---------------------------------------------------------------------------
// Barrier evaluation

struct PerceivedLead {
    double separation_m;
    double lead_speed_m_s;
    double lead_accel_m_s2;
};

/// What the filter plans against: the measured or worst-case lead, or a
/// stopped obstacle at the radar edge when the lead is out of range.
inline PerceivedLead perceive_lead(const SimState& s, double lead_accel_m_s2, const SafetyConfig& cfg) {
    if (s.separation_m > cfg.radar_range_m) return {cfg.radar_range_m, 0.0, 0.0};
    double a_l = lead_accel_m_s2;
    if (cfg.lead_accel_mode == LeadAccelMode::worst_case)
        a_l = s.lead_speed_m_s > 0.0 ? -cfg.a_lead_max_m_s2 : 0.0;
    return {s.separation_m, s.lead_speed_m_s, a_l};
}

/// Generic second-order barrier with a pluggable alpha1 and linear alpha2.
template <class Alpha1>
BarrierEval eval_hocbf(const SimState& s, double lead_accel_m_s2, const VehicleParams& p, const SafetyConfig& cfg,
                       const Alpha1& alpha1, double alpha2_gain) {
    const PerceivedLead lead = perceive_lead(s, lead_accel_m_s2, cfg);
    const double closing = lead.lead_speed_m_s - s.host_speed_m_s;
    BarrierEval be;
    be.v0 = lead.separation_m - cfg.z0_m;
    const Alpha1Value a1 = alpha1(be.v0, s.host_speed_m_s, lead.lead_speed_m_s);
    be.region = a1.region;
    be.v1 = closing + a1.value;
    // d(v1)/dt = (1 + d_vl) a_l + d_gap * closing + (d_vh - 1) * (T / (m r) - F_r / m)
    const double host_gain = a1.d_host_speed - 1.0;
    be.torque_coeff = host_gain / (p.mass_kg * p.wheel_radius_m);
    be.v2_at_zero_torque = (1.0 + a1.d_lead_speed) * lead.lead_accel_m_s2 -
                           host_gain * resistance_force(s, p) / p.mass_kg + a1.derivative * closing +
                           alpha2_gain * be.v1;
    return be;
}

/// Exponential CBF written directly in gain form.
inline BarrierEval eval_ecbf(const SimState& s, double lead_accel_m_s2, const VehicleParams& p,
                             const SafetyConfig& cfg) {
    const PerceivedLead lead = perceive_lead(s, lead_accel_m_s2, cfg);
    const double closing = lead.lead_speed_m_s - s.host_speed_m_s;
    BarrierEval be;
    be.v0 = lead.separation_m - cfg.z0_m;
    be.v1 = closing + ecbf_poles(cfg).first * be.v0;
    be.region = classify_region(be.v0, s.host_speed_m_s, cfg);
    be.torque_coeff = -1.0 / (p.mass_kg * p.wheel_radius_m);
    be.v2_at_zero_torque =
        lead.lead_accel_m_s2 + resistance_force(s, p) / p.mass_kg + cfg.ecbf_k1 * be.v0 + cfg.ecbf_k2 * closing;
    return be;
}

inline BarrierEval eval_barrier(const SimState& s, double lead_accel_m_s2, const VehicleParams& p,
                                const SafetyConfig& cfg, FilterKind kind) {
    if (kind == FilterKind::ecbf) return eval_ecbf(s, lead_accel_m_s2, p, cfg);
    return eval_hocbf(s, lead_accel_m_s2, p, cfg, TwoRegionAlpha1{cfg}, cfg.alpha2_gain);
}

/// Second-level condition for a plant integrated with explicit Euler at step
/// `dt_s`: v2(T) = (v1(x_next(T)) - v1(x)) / dt + alpha2 * v1(x). Alpha1 is
/// evaluated at the gap shifted by half a step of relative travel, matching
/// the Euler stopping distance. v2 is monotone in torque; its zero is found by
/// bisection over the actuator range and the returned affine form is the
/// secant through that zero.
template <class Alpha1>
BarrierEval eval_sampled(const SimState& s, double lead_accel_m_s2, const VehicleParams& p, const SafetyConfig& cfg,
                         const Alpha1& alpha1, double alpha2_gain, double dt_s) {
    const PerceivedLead lead = perceive_lead(s, lead_accel_m_s2, cfg);
    auto level1 = [&](double gap, double vh, double vl) {
        const Alpha1Value a = alpha1(gap + 0.5 * (vl - vh) * dt_s, vh, vl);
        return std::pair<Region, double>{a.region, vl - vh + a.value};
    };
    BarrierEval be;
    be.v0 = lead.separation_m - cfg.z0_m;
    const auto [region, v1_now] = level1(be.v0, s.host_speed_m_s, lead.lead_speed_m_s);
    be.v1 = v1_now;
    be.region = region;

    const double gap_next = be.v0 + (lead.lead_speed_m_s - s.host_speed_m_s) * dt_s;
    const double vl_next = std::max(0.0, lead.lead_speed_m_s + lead.lead_accel_m_s2 * dt_s);
    const double free_accel = -resistance_force(s, p) / p.mass_kg;
    auto vh_next = [&](double torque_nm) {
        const double a = free_accel + torque_nm / (p.mass_kg * p.wheel_radius_m);
        return std::max(0.0, s.host_speed_m_s + a * dt_s);
    };
    auto v2 = [&](double torque_nm) {
        return (level1(gap_next, vh_next(torque_nm), vl_next).second - v1_now) / dt_s + alpha2_gain * v1_now;
    };

    double lo = -p.max_brake_torque_nm;
    double hi = std::max(max_traction_torque(s.host_speed_m_s, p, s.gear_index), lo + 1.0);
    const double v2_lo = v2(lo), v2_hi = v2(hi);
    be.torque_coeff = std::min((v2_hi - v2_lo) / (hi - lo), -1e-9);
    // Full braking that stops the host within the step and keeps v1 >= 0 is
    // accepted even when the decay-rate condition cannot be met.
    const bool stops_inside = vh_next(lo) == 0.0 && level1(gap_next, 0.0, vl_next).second >= 0.0;
    if (v2_lo < 0.0 && stops_inside) {
        be.exact_torque_bound = lo;
    } else if (v2_lo < 0.0) {
        be.exact_torque_bound = lo + v2_lo / -be.torque_coeff;
    } else if (v2_hi >= 0.0) {
        be.exact_torque_bound = hi + v2_hi / -be.torque_coeff;
    } else {
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (v2(mid) >= 0.0 ? lo : hi) = mid;
        }
        be.exact_torque_bound = lo;
    }
    be.v2_at_zero_torque = -be.torque_coeff * be.exact_torque_bound;
    return be;
}

/// Barrier evaluation used by the filter: sampled-data when configured and a
/// step is given, continuous-time otherwise.
inline BarrierEval eval_filter_barrier(const SimState& s, double lead_accel_m_s2, const VehicleParams& p,
                                       const SafetyConfig& cfg, FilterKind kind, double dt_s) {
    if (!(cfg.sampled_data && dt_s > 0.0)) return eval_barrier(s, lead_accel_m_s2, p, cfg, kind);
    if (kind == FilterKind::ecbf) {
        const auto [p1, p2] = ecbf_poles(cfg);
        return eval_sampled(s, lead_accel_m_s2, p, cfg, LinearAlpha1{p1}, p2, dt_s);
    }
    return eval_sampled(s, lead_accel_m_s2, p, cfg, TwoRegionAlpha1{cfg}, cfg.alpha2_gain, dt_s);
}

/// Minimal-change projection of a proposed wheel torque onto {v2 >= 0}
/// intersected with the actuator range. The one-variable QP has the closed
/// form min(proposed, T_ub), then the actuator clamp.
inline FilterResult filter_action(double proposed_torque_nm, const SimState& s, double lead_accel_m_s2,
                                  const VehicleParams& p, const SafetyConfig& cfg, FilterKind kind,
                                  double dt_s = 0.0) {
    FilterResult r;
    const double lower = -p.max_brake_torque_nm;
    const double upper = max_traction_torque(s.host_speed_m_s, p, s.gear_index);
    double t = proposed_torque_nm;
    if (kind != FilterKind::none) {
        r.barrier = eval_filter_barrier(s, lead_accel_m_s2, p, cfg, kind, dt_s);
        const double t_ub = r.barrier.torque_upper_bound();
        r.infeasible = t_ub < lower;
        r.intervened = std::min(proposed_torque_nm, upper) > t_ub;
        t = std::min(t, t_ub);
    }
    t = std::clamp(t, lower, upper);
    r.safe_torque_nm = t;
    return r;
}

// ---------------------------------------------------------------------------
// Grid export and rollout oracle

struct AxisSpec {
    double lo = 0.0;
    double hi = 1.0;
    int count = 2;

    double at(int i) const { return count <= 1 ? lo : lo + (hi - lo) * i / (count - 1); }
};

struct SafeSetCell {
    double z_m = 0.0;
    double v_h_m_s = 0.0;
    Region region = Region::region1;
    double min_lead_speed_m_s = 0.0;
    bool possible_safe = false;
};

/// Possible safe operating points over a (separation, host speed) grid.
/// A cell is possibly safe when some lead speed up to v_host_max avoids a
/// collision under simultaneous maximum braking.
inline std::vector<SafeSetCell> safe_set_grid(const SafetyConfig& cfg, const AxisSpec& z_axis,
                                              const AxisSpec& v_axis) {
    if (z_axis.count < 1 || v_axis.count < 1 || z_axis.hi < z_axis.lo || v_axis.hi < v_axis.lo)
        throw OutOfRange("safe_set_grid: empty range");
    std::vector<SafeSetCell> cells;
    cells.reserve(static_cast<std::size_t>(z_axis.count) * static_cast<std::size_t>(v_axis.count));
    for (int i = 0; i < z_axis.count; ++i) {
        for (int j = 0; j < v_axis.count; ++j) {
            SafeSetCell c;
            c.z_m = z_axis.at(i);
            c.v_h_m_s = v_axis.at(j);
            const double gap = c.z_m - cfg.z0_m;
            c.region = classify_region(gap, c.v_h_m_s, cfg);
            c.min_lead_speed_m_s = min_lead_speed(gap, c.v_h_m_s, cfg);
            c.possible_safe = gap >= 0.0 && c.min_lead_speed_m_s <= cfg.v_host_max_m_s;
            cells.push_back(c);
        }
    }
    return cells;
}

/// Rolls out both vehicles braking at their maximum deceleration until rest
/// and reports whether the separation stays at or above z0 throughout.
inline bool brute_force_safe(double z_m, double v_h, double v_l, const SafetyConfig& cfg, double dt_s) {
    auto advance = [dt_s](double& v, double decel) {
        if (v <= 0.0) return 0.0;
        if (v <= decel * dt_s) {
            const double d = v * v / (2.0 * decel);
            v = 0.0;
            return d;
        }
        const double d = v * dt_s - 0.5 * decel * dt_s * dt_s;
        v -= decel * dt_s;
        return d;
    };
    double z = z_m;
    if (z < cfg.z0_m) return false;
    while (v_h > 0.0 || v_l > 0.0) {
        z += advance(v_l, cfg.a_lead_max_m_s2) - advance(v_h, cfg.a_host_max_m_s2);
        if (z < cfg.z0_m) return false;
        if (v_h <= 0.0) break;   // gap can only grow from here
    }
    return true;
}

} // namespace ptcbf
