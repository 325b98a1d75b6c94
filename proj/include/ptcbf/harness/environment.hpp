#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ptcbf/driver.hpp"
#include "ptcbf/dynamics.hpp"
#include "ptcbf/harness/config.hpp"
#include "ptcbf/policy.hpp"
#include "ptcbf/safety.hpp"

namespace ptcbf {

inline constexpr double kMetersPerMile = 1609.344;
inline constexpr double kLitersPerUsGallon = 3.785411784;
inline constexpr double kDieselDensityKgPerL = 0.85;
inline constexpr double kCrashTolerance_m = 0.01;

inline double miles_per_gallon(double distance_m, double fuel_g) {
    const double gallons = fuel_g / 1000.0 / kDieselDensityKgPerL / kLitersPerUsGallon;
    return gallons > 0.0 ? (distance_m / kMetersPerMile) / gallons : 0.0;
}

struct EpisodeMetrics {
    std::uint64_t episode_index = 0;
    std::uint64_t seed = 0;
    long steps = 0;
    long crash_count = 0;
    double min_gap_m = std::numeric_limits<double>::infinity();
    double fuel_g = 0.0;
    double distance_m = 0.0;
    double mpg = 0.0;
    double a_rms = 0.0;
    std::array<double, 4> mean_reward_terms{};
    double mean_reward = 0.0;
    double intervention_rate = 0.0;
    long infeasible_steps = 0;
    double mean_approach_rate_m_s = 0.0;

    bool operator==(const EpisodeMetrics&) const = default;
};

/// One simulation step as seen by the trace.
struct StepRecord {
    double time_s = 0.0;
    double separation_m = 0.0;
    double host_speed_m_s = 0.0;
    double lead_speed_m_s = 0.0;
    int gear_index = 0;
    double proposed_torque_nm = 0.0;
    double applied_torque_nm = 0.0;
    double v0 = 0.0;
    double v1 = 0.0;
    double v2 = 0.0;
    RewardTerms reward;
    double desired_accel_m_s2 = 0.0;
    double accel_m_s2 = 0.0;
    double lead_accel_m_s2 = 0.0;
    double fuel_rate_g_s = 0.0;
    int gear_delta = 0;
    bool intervened = false;
    bool infeasible = false;
};

/// Car-following environment: driver, lead vehicle, safety filter and plant.
/// The filter only touches torque; gear requests go straight to the AMT.
class Environment {
public:
    Environment(const ExperimentConfig& cfg, DriveCycle base_cycle, FilterKind filter)
        : cfg_(cfg), base_(std::move(base_cycle)), filter_(filter), admission_{filter} {}

    /// Initial states must be admissible under every listed filter; used to
    /// give different filters identical episodes.
    void set_admission_filters(std::vector<FilterKind> kinds) { admission_ = std::move(kinds); }

    Observation reset(std::uint64_t episode_index) {
        episode_index_ = episode_index;
        setup_ = randomize_episode(cfg_.randomization, base_, episode_index, cfg_.vehicle, cfg_.idm,
                                   [this](const SimState& s, const VehicleParams& p) {
                                       for (FilterKind k : admission_)
                                           if (!initial_state_admissible(s, p, cfg_.safety, k)) return false;
                                       return true;
                                   });
        state_ = setup_.initial;
        end_time_ = std::min(setup_.start_time_s + cfg_.episode_length_s, setup_.cycle.duration());
        lead_ = LeadController{cfg_.safety.a_lead_max_m_s2, cfg_.safety.a_lead_max_m_s2};
        out_of_range_s_ = 0.0;
        last_accel_ = 0.0;
        desired_accel_ = idm_acceleration(state_, setup_.idm, cfg_.safety.radar_range_m);
        done_ = false;
        acc_ = Accumulator{};
        return observation();
    }

    StepRecord step(const HybridAction& action) {
        if (done_) throw OutOfRange("step called on a finished episode");
        const double dt = cfg_.dt_s;
        const VehicleParams& p = setup_.vehicle;
        const double a_lead = lead_.accel(setup_.cycle, setup_.brake_events, state_.time_s, state_.lead_speed_m_s, dt);
        const FilterResult f = filter_action(action.torque_proposal_nm, state_, a_lead, p, cfg_.safety, filter_, dt);
        const PowertrainPoint pt = powertrain_point(state_, f.safe_torque_nm, p);

        StepRecord r;
        r.time_s = state_.time_s;
        r.separation_m = state_.separation_m;
        r.host_speed_m_s = state_.host_speed_m_s;
        r.lead_speed_m_s = state_.lead_speed_m_s;
        r.gear_index = state_.gear_index;
        r.proposed_torque_nm = action.torque_proposal_nm;
        r.applied_torque_nm = f.safe_torque_nm;
        r.v0 = f.barrier.v0;
        r.v1 = f.barrier.v1;
        r.v2 = f.barrier.v2(f.safe_torque_nm);
        r.desired_accel_m_s2 = desired_accel_;
        r.lead_accel_m_s2 = a_lead;
        r.fuel_rate_g_s = pt.fuel_rate_g_s;
        r.intervened = f.intervened;
        r.infeasible = f.infeasible;

        const double prev_torque = state_.prev_wheel_torque_nm;
        SimState next = ptcbf::step(state_, f.safe_torque_nm, a_lead, dt, p);
        const GearChange gc = apply_gear_change(next, action.gear_delta, p.gear_count());
        next = gc.state;
        r.gear_delta = gc.realized_delta;
        r.accel_m_s2 = (next.host_speed_m_s - state_.host_speed_m_s) / dt;
        r.reward = reward_terms({r.accel_m_s2, desired_accel_, pt.fuel_rate_g_s, f.safe_torque_nm - prev_torque,
                                 gc.realized_delta},
                                cfg_.reward);

        acc_.add(r, next, dt, cfg_.safety.z0_m, cfg_.safety.radar_range_m);
        state_ = next;
        last_accel_ = r.accel_m_s2;
        desired_accel_ = idm_acceleration(state_, setup_.idm, cfg_.safety.radar_range_m);
        out_of_range_s_ = lead_in_range() ? 0.0 : out_of_range_s_ + dt;
        done_ = state_.time_s + 0.5 * dt > end_time_ || out_of_range_s_ > cfg_.lead_out_of_range_timeout_s;
        return r;
    }

    bool done() const { return done_; }
    bool lead_in_range() const { return state_.separation_m <= cfg_.safety.radar_range_m; }
    const SimState& state() const { return state_; }
    const EpisodeSetup& setup() const { return setup_; }
    const VehicleParams& vehicle() const { return setup_.vehicle; }
    const ExperimentConfig& config() const { return cfg_; }
    FilterKind filter() const { return filter_; }
    double desired_accel() const { return desired_accel_; }
    std::uint64_t episode_index() const { return episode_index_; }

    Observation observation() const {
        Observation o;
        o.lead_in_range = lead_in_range();
        o.lead_speed_m_s = o.lead_in_range ? state_.lead_speed_m_s : 0.0;
        o.rel_speed_m_s = o.lead_in_range ? state_.lead_speed_m_s - state_.host_speed_m_s : 0.0;
        o.separation_m = o.lead_in_range ? state_.separation_m : cfg_.safety.radar_range_m;
        o.desired_accel_m_s2 = desired_accel_;
        o.accel_m_s2 = last_accel_;
        o.gear_index = state_.gear_index;
        o.mass_kg = setup_.vehicle.mass_kg;
        o.grade_rad = state_.grade_rad;
        o.prev_torque_nm = state_.prev_wheel_torque_nm;
        return o;
    }

    EpisodeMetrics metrics() const {
        EpisodeMetrics m;
        m.episode_index = episode_index_;
        m.seed = cfg_.randomization.seed;
        m.steps = acc_.steps;
        m.crash_count = acc_.crashes;
        m.min_gap_m = acc_.min_gap;
        m.fuel_g = acc_.fuel_g;
        m.distance_m = acc_.distance_m;
        m.mpg = miles_per_gallon(acc_.distance_m, acc_.fuel_g);
        m.infeasible_steps = acc_.infeasible;
        if (acc_.steps > 0) {
            const double n = static_cast<double>(acc_.steps);
            m.a_rms = std::sqrt(acc_.sq_accel_err / n);
            for (int i = 0; i < 4; ++i) m.mean_reward_terms[i] = acc_.terms[i] / n;
            m.mean_reward = acc_.reward / n;
            m.intervention_rate = static_cast<double>(acc_.interventions) / n;
        }
        if (acc_.in_range_steps > 0) m.mean_approach_rate_m_s = acc_.approach / static_cast<double>(acc_.in_range_steps);
        return m;
    }

private:
    struct Accumulator {
        long steps = 0;
        long crashes = 0;
        long interventions = 0;
        long infeasible = 0;
        long in_range_steps = 0;
        double min_gap = std::numeric_limits<double>::infinity();
        double fuel_g = 0.0;
        double distance_m = 0.0;
        double sq_accel_err = 0.0;
        double reward = 0.0;
        double approach = 0.0;
        std::array<double, 4> terms{};

        void add(const StepRecord& r, const SimState& next, double dt, double z0, double radar_range_m) {
            ++steps;
            fuel_g += r.fuel_rate_g_s * dt;
            distance_m += 0.5 * (r.host_speed_m_s + next.host_speed_m_s) * dt;
            const double e = r.accel_m_s2 - r.desired_accel_m_s2;
            sq_accel_err += e * e;
            const auto t = r.reward.as_array();
            for (int i = 0; i < 4; ++i) terms[i] += t[i];
            reward += r.reward.total();
            interventions += r.intervened ? 1 : 0;
            infeasible += r.infeasible ? 1 : 0;
            min_gap = std::min(min_gap, next.separation_m);
            if (next.separation_m < z0 - kCrashTolerance_m) ++crashes;
            if (r.separation_m <= radar_range_m) {
                ++in_range_steps;
                approach += std::max(0.0, r.host_speed_m_s - r.lead_speed_m_s);
            }
        }
    };

    ExperimentConfig cfg_;
    DriveCycle base_;
    FilterKind filter_;
    std::vector<FilterKind> admission_;
    EpisodeSetup setup_;
    SimState state_;
    LeadController lead_;
    double end_time_ = 0.0;
    double out_of_range_s_ = 0.0;
    double last_accel_ = 0.0;
    double desired_accel_ = 0.0;
    bool done_ = true;
    std::uint64_t episode_index_ = 0;
    Accumulator acc_;
};

} // namespace ptcbf
