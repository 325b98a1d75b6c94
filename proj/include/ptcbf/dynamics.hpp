#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ptcbf/errors.hpp"
#include "ptcbf/fuel_model.hpp"

namespace ptcbf {

inline constexpr double kRadPerSecToRpm = 60.0 / (2.0 * M_PI);

/// 10-speed geometric ladder from `first` down to `last`.
inline std::vector<double> geometric_gear_ladder(double first = 12.8, double last = 1.0, int n = 10) {
    std::vector<double> r(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        r[static_cast<std::size_t>(i)] = first * std::pow(last / first, static_cast<double>(i) / (n - 1));
    return r;
}

/// Physical and powertrain constants of the host truck.
struct VehicleParams {
    double mass_kg = 12000.0;
    double frontal_area_m2 = 7.71;
    double drag_coeff = 0.08;
    double rolling_coeff = 0.015;
    double wheel_radius_m = 0.5;
    double air_density_kg_m3 = 1.2;
    double gravity_m_s2 = 9.81;
    std::vector<double> gear_ratios = geometric_gear_ladder();
    double final_drive_ratio = 3.7;
    double driveline_efficiency = 0.95;
    double max_engine_torque_nm = 1000.0;
    double max_brake_torque_nm = 15000.0;
    std::pair<double, double> engine_speed_range_rpm{600.0, 2500.0};
    FuelModel fuel_model{};

    int gear_count() const { return static_cast<int>(gear_ratios.size()); }

    /// Throws ConfigError when an invariant is violated.
    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("vehicle: " + m); };
        if (!(mass_kg > 0)) fail("mass_kg must be positive");
        if (!(wheel_radius_m > 0)) fail("wheel_radius_m must be positive");
        if (!(max_brake_torque_nm > 0)) fail("max_brake_torque_nm must be positive");
        if (!(max_engine_torque_nm > 0)) fail("max_engine_torque_nm must be positive");
        if (!(final_drive_ratio > 0)) fail("final_drive_ratio must be positive");
        if (!(driveline_efficiency > 0 && driveline_efficiency <= 1)) fail("driveline_efficiency must be in (0,1]");
        if (gear_ratios.empty()) fail("gear_ratios is empty");
        for (std::size_t i = 0; i < gear_ratios.size(); ++i) {
            if (!(gear_ratios[i] > 0)) fail("gear ratios must be positive");
            if (i > 0 && !(gear_ratios[i] < gear_ratios[i - 1])) fail("gear ratios must be strictly decreasing");
        }
        if (!(engine_speed_range_rpm.first >= 0 && engine_speed_range_rpm.second > engine_speed_range_rpm.first))
            fail("engine_speed_range_rpm must be an ascending pair");
        if (!(fuel_model.idle_rate_g_s >= 0)) fail("idle fuel rate must be non-negative");
        if (fuel_model.kind == FuelModelKind::tabulated && fuel_model.table.rates_g_s.empty())
            fail("tabulated fuel model has no table");
    }
};

/// Car-following state. Speeds never go negative.
struct SimState {
    double separation_m = 50.0;
    double host_speed_m_s = 0.0;
    double lead_speed_m_s = 0.0;
    int gear_index = 0;
    double grade_rad = 0.0;
    double prev_wheel_torque_nm = 0.0;
    double time_s = 0.0;

    bool operator==(const SimState&) const = default;
};

enum class EnvelopeStatus { ok, over_torque, under_speed, over_speed };

inline const char* to_string(EnvelopeStatus s) {
    switch (s) {
        case EnvelopeStatus::ok: return "ok";
        case EnvelopeStatus::over_torque: return "over_torque";
        case EnvelopeStatus::under_speed: return "under_speed";
        case EnvelopeStatus::over_speed: return "over_speed";
    }
    return "?";
}

struct PowertrainPoint {
    double engine_speed_rpm = 0.0;
    double engine_torque_nm = 0.0;
    double wheel_torque_nm = 0.0;
    double fuel_rate_g_s = 0.0;
    EnvelopeStatus status = EnvelopeStatus::ok;

    bool in_envelope() const { return status == EnvelopeStatus::ok; }
};

/// Aerodynamic + rolling + grade resistance. Negative on a steep enough downgrade.
inline double resistance_force(const SimState& s, const VehicleParams& p) {
    const double v = s.host_speed_m_s;
    return 0.5 * p.air_density_kg_m3 * p.frontal_area_m2 * p.drag_coeff * v * v +
           p.mass_kg * p.gravity_m_s2 * p.rolling_coeff * std::cos(s.grade_rad) +
           p.mass_kg * p.gravity_m_s2 * std::sin(s.grade_rad);
}

inline double total_ratio(const VehicleParams& p, int gear) {
    return p.gear_ratios.at(static_cast<std::size_t>(gear)) * p.final_drive_ratio;
}

inline double engine_speed_rpm(double host_speed_m_s, const VehicleParams& p, int gear) {
    return host_speed_m_s / p.wheel_radius_m * total_ratio(p, gear) * kRadPerSecToRpm;
}

/// Largest wheel torque the engine can deliver in `gear` at the current speed.
/// Below idle speed the clutch slips and full torque is available; above the
/// governed speed the rev limiter cuts traction.
inline double max_traction_torque(double host_speed_m_s, const VehicleParams& p, int gear) {
    if (engine_speed_rpm(host_speed_m_s, p, gear) > p.engine_speed_range_rpm.second) return 0.0;
    return p.max_engine_torque_nm * total_ratio(p, gear) * p.driveline_efficiency;
}

/// Engine operating point that realizes `wheel_torque_nm` in the current gear.
///
/// Efficiency divides on the traction side and multiplies when power flows
/// back from the wheels. Fuel is evaluated at no less than idle speed
/// (slipping clutch at launch).
inline PowertrainPoint powertrain_point(const SimState& s, double wheel_torque_nm, const VehicleParams& p) {
    if (s.gear_index < 0 || s.gear_index >= p.gear_count()) throw OutOfRange("gear index out of range");
    const double ratio = total_ratio(p, s.gear_index);
    PowertrainPoint pt;
    pt.wheel_torque_nm = wheel_torque_nm;
    pt.engine_speed_rpm = engine_speed_rpm(s.host_speed_m_s, p, s.gear_index);
    pt.engine_torque_nm = wheel_torque_nm >= 0.0 ? wheel_torque_nm / (ratio * p.driveline_efficiency)
                                                 : wheel_torque_nm * p.driveline_efficiency / ratio;
    const auto [lo, hi] = p.engine_speed_range_rpm;
    if (pt.engine_torque_nm > p.max_engine_torque_nm * (1.0 + 1e-12))
        pt.status = EnvelopeStatus::over_torque;
    else if (pt.engine_speed_rpm > hi)
        pt.status = EnvelopeStatus::over_speed;
    else if (pt.engine_speed_rpm < lo)
        pt.status = EnvelopeStatus::under_speed;
    pt.fuel_rate_g_s = wheel_torque_nm > 0.0
                           ? p.fuel_model.rate_g_s(std::max(pt.engine_speed_rpm, lo), pt.engine_torque_nm)
                           : p.fuel_model.idle_rate_g_s;
    return pt;
}

/// Wheel torque delivered by `engine_torque_nm` through the driveline of `gear`.
inline double wheel_torque_from_engine(double engine_torque_nm, const VehicleParams& p, int gear) {
    const double ratio = total_ratio(p, gear);
    return engine_torque_nm >= 0.0 ? engine_torque_nm * ratio * p.driveline_efficiency
                                   : engine_torque_nm * ratio / p.driveline_efficiency;
}

/// One explicit-Euler step of the car-following model.
inline SimState step(const SimState& s, double wheel_torque_nm, double lead_accel_m_s2, double dt_s,
                     const VehicleParams& p) {
    if (!(dt_s > 0)) throw OutOfRange("dt must be positive");
    if (!std::isfinite(wheel_torque_nm) || !std::isfinite(lead_accel_m_s2) || !std::isfinite(s.separation_m) ||
        !std::isfinite(s.host_speed_m_s) || !std::isfinite(s.lead_speed_m_s) || !std::isfinite(s.grade_rad))
        throw NonFiniteState("non-finite input to step");

    const double host_accel = wheel_torque_nm / (p.wheel_radius_m * p.mass_kg) - resistance_force(s, p) / p.mass_kg;
    SimState next = s;
    next.separation_m = s.separation_m + dt_s * (s.lead_speed_m_s - s.host_speed_m_s);
    next.lead_speed_m_s = std::max(0.0, s.lead_speed_m_s + dt_s * lead_accel_m_s2);
    next.host_speed_m_s = std::max(0.0, s.host_speed_m_s + dt_s * host_accel);
    next.prev_wheel_torque_nm = wheel_torque_nm;
    next.time_s = s.time_s + dt_s;
    if (!std::isfinite(next.separation_m) || !std::isfinite(next.host_speed_m_s))
        throw NonFiniteState("step produced a non-finite state");
    return next;
}

struct GearChange {
    SimState state;
    int realized_delta = 0;
};

/// Applies an AMT shift request; shifts past either end are no-ops.
inline GearChange apply_gear_change(const SimState& s, int delta, int gear_count = 10) {
    GearChange out{s, 0};
    const int target = std::clamp(s.gear_index + std::clamp(delta, -1, 1), 0, gear_count - 1);
    out.realized_delta = target - s.gear_index;
    out.state.gear_index = target;
    return out;
}

} // namespace ptcbf
