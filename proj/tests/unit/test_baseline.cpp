#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ptcbf/baseline.hpp"

using namespace ptcbf;

namespace {

/// Independent gear enumeration straight from the driveline and Willans formulas.
int oracle_gear(double speed, double wheel_torque, const VehicleParams& p) {
    int best = -1;
    double best_rate = 0.0;
    for (int g = 0; g < 10; ++g) {
        const double ratio = p.gear_ratios[static_cast<std::size_t>(g)] * p.final_drive_ratio;
        const double omega = speed / p.wheel_radius_m * ratio;
        const double rpm = omega * 60.0 / (2.0 * M_PI);
        const double te = wheel_torque >= 0.0 ? wheel_torque / (ratio * p.driveline_efficiency)
                                              : wheel_torque * p.driveline_efficiency / ratio;
        if (te > p.max_engine_torque_nm * (1.0 + 1e-12) || rpm < 600.0 || rpm > 2500.0) continue;
        const double power_kw = te * omega / 1000.0;
        const double rate =
            wheel_torque > 0.0 && power_kw > 0.0 ? std::max(0.4, 0.4 + 0.05 * power_kw + 12.0 * rpm / 60000.0) : 0.4;
        if (best < 0 || rate <= best_rate + 1e-12 * std::max(1.0, best_rate)) {
            best = g;
            best_rate = rate;
        }
    }
    return best;
}

SimState at_speed(double v, int gear, double grade = 0.0) {
    SimState s;
    s.host_speed_m_s = v;
    s.lead_speed_m_s = v;
    s.gear_index = gear;
    s.grade_rad = grade;
    return s;
}

} // namespace

TEST(Baseline, SteadySpeedCompensatesResistance) {
    VehicleParams p;
    const SimState s = at_speed(12.0, 7);
    const HybridAction a = baseline_action(s, 0.0, p);
    EXPECT_DOUBLE_EQ(a.torque_proposal_nm, p.wheel_radius_m * resistance_force(s, p));
}

TEST(Baseline, FeedforwardAddsInertialTorque) {
    VehicleParams p;
    const SimState s = at_speed(12.0, 7, 0.01);
    const HybridAction a = baseline_action(s, -1.0, p);
    EXPECT_NEAR(a.torque_proposal_nm, p.wheel_radius_m * (resistance_force(s, p) - p.mass_kg), 1e-9);
    EXPECT_EQ(baseline_action(s, -100.0, p).torque_proposal_nm, -p.max_brake_torque_nm);
    EXPECT_EQ(baseline_action(s, 100.0, p).torque_proposal_nm, max_traction_torque(12.0, p, 7));
}

TEST(Baseline, IdleTieGoesToHighestFeasibleGear) {
    VehicleParams p;
    const SimState s = at_speed(15.0, 3);
    int highest = -1;
    for (int g = 0; g < p.gear_count(); ++g) {
        const double rpm = engine_speed_rpm(15.0, p, g);
        if (rpm >= 600.0 && rpm <= 2500.0) highest = g;
    }
    ASSERT_GT(highest, 3);
    EXPECT_EQ(fuel_optimal_gear(s, -500.0, p), highest);
    EXPECT_EQ(baseline_action(s, -2.0, p).gear_delta, +1);
}

TEST(Baseline, FlatFuelMapTieGoesToHigherGear) {
    VehicleParams p;
    p.fuel_model.kind = FuelModelKind::tabulated;
    p.fuel_model.table.speeds_rpm = {0.0, 3000.0};
    p.fuel_model.table.torques_nm = {0.0, 2000.0};
    p.fuel_model.table.rates_g_s = {2.0, 2.0, 2.0, 2.0};
    const SimState s = at_speed(10.0, 0);
    const int g = fuel_optimal_gear(s, 2000.0, p);
    ASSERT_GE(g, 0);
    SimState up = s;
    up.gear_index = g + 1;
    if (g + 1 < p.gear_count()) {
        EXPECT_FALSE(powertrain_point(up, 2000.0, p).in_envelope());
    }
}

TEST(Baseline, NoFeasibleGearHolds) {
    VehicleParams p;
    const SimState s = at_speed(40.0, 9);
    EXPECT_EQ(fuel_optimal_gear(s, 1e6, p), -1);
    EXPECT_EQ(baseline_action(s, 3.0, p).gear_delta, 0);
}

TEST(Baseline, GearMatchesIndependentEnumeration) {
    VehicleParams p;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> speed(2.0, 30.0), torque(-5000.0, 25000.0);
    std::uniform_int_distribution<int> gear(0, 9);
    int feasible = 0;
    for (int i = 0; i < 1000; ++i) {
        const double v = speed(rng), t = torque(rng);
        const SimState s = at_speed(v, gear(rng));
        const int expected = oracle_gear(v, t, p);
        EXPECT_EQ(fuel_optimal_gear(s, t, p), expected) << "v " << v << " T " << t;
        feasible += expected >= 0 ? 1 : 0;
    }
    EXPECT_GT(feasible, 500);
}

TEST(Baseline, StepsOneGearTowardTarget) {
    VehicleParams p;
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> speed(3.0, 28.0), accel(-3.0, 2.0);
    std::uniform_int_distribution<int> gear(0, 9);
    for (int i = 0; i < 500; ++i) {
        const SimState s = at_speed(speed(rng), gear(rng));
        const double a_des = accel(rng);
        const HybridAction a = baseline_action(s, a_des, p);
        const double demand = p.wheel_radius_m * (resistance_force(s, p) + p.mass_kg * a_des);
        const int target = fuel_optimal_gear(s, demand, p);
        const int expected = target < 0 ? 0 : (target > s.gear_index) - (target < s.gear_index);
        EXPECT_EQ(a.gear_delta, expected);
    }
}

TEST(Baseline, Deterministic) {
    VehicleParams p;
    const SimState s = at_speed(17.3, 6, -0.01);
    const HybridAction a = baseline_action(s, 0.7, p), b = baseline_action(s, 0.7, p);
    EXPECT_EQ(a.torque_proposal_nm, b.torque_proposal_nm);
    EXPECT_EQ(a.gear_delta, b.gear_delta);
}
