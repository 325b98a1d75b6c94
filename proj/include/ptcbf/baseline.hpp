#pragma once

#include <algorithm>
#include <cmath>

#include "ptcbf/dynamics.hpp"
#include "ptcbf/policy.hpp"

namespace ptcbf {

/// Fuel-optimal feasible gear for delivering `wheel_torque_nm` at the current
/// speed, or -1 when every gear is outside the engine envelope. Fuel ties
/// (within 1e-12 relative) go to the higher gear.
inline int fuel_optimal_gear(const SimState& s, double wheel_torque_nm, const VehicleParams& p) {
    int best = -1;
    double best_rate = 0.0;
    for (int g = p.gear_count() - 1; g >= 0; --g) {
        SimState probe = s;
        probe.gear_index = g;
        const PowertrainPoint pt = powertrain_point(probe, wheel_torque_nm, p);
        if (!pt.in_envelope()) continue;
        if (best < 0 || pt.fuel_rate_g_s < best_rate - 1e-12 * std::max(1.0, std::abs(best_rate))) {
            best = g;
            best_rate = pt.fuel_rate_g_s;
        }
    }
    return best;
}

/// Model-based feedforward: resistance compensation plus the torque for the
/// requested acceleration, and one AMT step toward the fuel-optimal gear.
inline HybridAction baseline_action(const SimState& s, double desired_accel_m_s2, const VehicleParams& p) {
    const double demand = p.wheel_radius_m * (resistance_force(s, p) + p.mass_kg * desired_accel_m_s2);
    HybridAction a;
    a.torque_proposal_nm =
        std::clamp(demand, -p.max_brake_torque_nm, max_traction_torque(s.host_speed_m_s, p, s.gear_index));
    const int target = fuel_optimal_gear(s, demand, p);
    if (target >= 0) a.gear_delta = (target > s.gear_index) - (target < s.gear_index);
    return a;
}

} // namespace ptcbf
