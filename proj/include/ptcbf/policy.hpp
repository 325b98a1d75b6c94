#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptcbf/nn.hpp"

namespace ptcbf {

/// Wheel-torque proposal plus an AMT shift request in {-1, 0, +1}.
struct HybridAction {
    double torque_proposal_nm = 0.0;
    int gear_delta = 0;
};

// ---------------------------------------------------------------------------
// Observation

inline constexpr int kFeatureCount = 10;

/// Raw MDP state: lead speed, relative speed, desired and actual acceleration,
/// separation, gear, mass, grade, previous torque and the radar flag.
struct Observation {
    double lead_speed_m_s = 0.0;
    double rel_speed_m_s = 0.0;
    double desired_accel_m_s2 = 0.0;
    double accel_m_s2 = 0.0;
    double separation_m = 0.0;
    int gear_index = 0;
    double mass_kg = 0.0;
    double grade_rad = 0.0;
    double prev_torque_nm = 0.0;
    bool lead_in_range = true;
};

/// Fixed divisors mapping each observation entry to roughly unit scale.
using FeatureScales = std::array<double, kFeatureCount>;
inline constexpr FeatureScales kDefaultFeatureScales{40.0, 10.0, 3.0, 3.0, 150.0, 9.0, 12000.0, 0.05, 15000.0, 1.0};

using PolicyState = Eigen::Matrix<double, kFeatureCount, 1>;

inline PolicyState make_policy_state(const Observation& o, const FeatureScales& sc = kDefaultFeatureScales) {
    PolicyState s;
    s << o.lead_speed_m_s / sc[0], o.rel_speed_m_s / sc[1], o.desired_accel_m_s2 / sc[2], o.accel_m_s2 / sc[3],
        o.separation_m / sc[4], o.gear_index / sc[5], o.mass_kg / sc[6], o.grade_rad / sc[7], o.prev_torque_nm / sc[8],
        (o.lead_in_range ? 1.0 : 0.0) / sc[9];
    return s;
}

// ---------------------------------------------------------------------------
// Reward

struct RewardWeights {
    double w_a = 0.675;
    double w_f = 0.25;
    double w_T = 0.075;
    double w_g = 0.075;
    double a_des_max = 3.0;
    double fuel_rate_max = 14.0;
    double torque_delta_max = 30000.0;

    double total_weight() const { return w_a + w_f + w_T + w_g; }
};

struct RewardInput {
    double accel_m_s2 = 0.0;
    double desired_accel_m_s2 = 0.0;
    double fuel_rate_g_s = 0.0;
    double torque_delta_nm = 0.0;
    int gear_delta_realized = 0;
};

struct RewardTerms {
    double accommodation = 0.0;
    double fuel = 0.0;
    double torque = 0.0;
    double gear = 0.0;

    double total() const { return accommodation + fuel + torque + gear; }
    std::array<double, 4> as_array() const { return {accommodation, fuel, torque, gear}; }
};

/// Each term decays by a decade per unit of normalized deviation.
inline RewardTerms reward_terms(const RewardInput& x, const RewardWeights& w) {
    RewardTerms r;
    r.accommodation = w.w_a * std::pow(0.1, std::abs(x.accel_m_s2 - x.desired_accel_m_s2) / w.a_des_max);
    r.fuel = w.w_f * std::pow(0.1, x.fuel_rate_g_s / w.fuel_rate_max);
    r.torque = w.w_T * std::pow(0.1, std::abs(x.torque_delta_nm) / w.torque_delta_max);
    r.gear = w.w_g * std::pow(0.1, std::abs(static_cast<double>(x.gear_delta_realized)));
    return r;
}

inline double reward(const RewardInput& x, const RewardWeights& w) { return reward_terms(x, w).total(); }

// ---------------------------------------------------------------------------
// Hybrid actor-critic

struct PolicyConfig {
    std::vector<int> hidden{128, 128};
    double torque_min_nm = -15000.0;
    double torque_max_nm = 15000.0;
    double log_std_min = -5.0;
    double log_std_max = 0.5;
    double init_log_std = -1.0;

    double torque_mid() const { return 0.5 * (torque_max_nm + torque_min_nm); }
    double torque_half_span() const { return 0.5 * (torque_max_nm - torque_min_nm); }
};

/// Actor outputs: three gear logits (down, hold, up), the pre-squash torque
/// mean and an unconstrained log-std parameter. Critic outputs a state value.
struct PolicyParams {
    PolicyConfig config;
    FeatureScales scales = kDefaultFeatureScales;
    nn::Mlp actor;
    nn::Mlp critic;

    static constexpr int kGearOut = 3;
    static constexpr int kMeanOut = 3;
    static constexpr int kStdOut = 4;
    static constexpr int kActorOut = 5;

    template <class Rng>
    static PolicyParams create(const PolicyConfig& cfg, Rng& rng, const FeatureScales& scales = kDefaultFeatureScales) {
        PolicyParams p;
        p.config = cfg;
        p.scales = scales;
        std::vector<int> a{kFeatureCount}, c{kFeatureCount};
        a.insert(a.end(), cfg.hidden.begin(), cfg.hidden.end());
        c.insert(c.end(), cfg.hidden.begin(), cfg.hidden.end());
        a.push_back(kActorOut);
        c.push_back(1);
        p.actor = nn::Mlp(a);
        p.critic = nn::Mlp(c);
        p.actor.initialize(rng, 0.01);
        p.critic.initialize(rng, 1.0);
        const double frac = (cfg.init_log_std - cfg.log_std_min) / (cfg.log_std_max - cfg.log_std_min);
        p.actor.bias(p.actor.layer_count() - 1)(kStdOut) = std::log(frac / (1.0 - frac));
        return p;
    }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double squash_log_std(double raw, const PolicyConfig& c) {
    return c.log_std_min + (c.log_std_max - c.log_std_min) * sigmoid(raw);
}

struct PolicyHeads {
    Eigen::Vector3d probs;
    Eigen::Vector3d log_probs;
    double mean = 0.0;      // pre-squash
    double log_std = 0.0;   // pre-squash
};

inline PolicyHeads heads_from_output(const Eigen::Ref<const Eigen::VectorXd>& out, const PolicyConfig& cfg) {
    PolicyHeads h;
    const Eigen::Vector3d logits = out.head<3>();
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    h.log_probs = logits.array() - lse;
    h.probs = h.log_probs.array().exp();
    h.mean = out(PolicyParams::kMeanOut);
    h.log_std = squash_log_std(out(PolicyParams::kStdOut), cfg);
    return h;
}

inline PolicyHeads policy_heads(const PolicyParams& p, const PolicyState& s) {
    return heads_from_output(p.actor.forward_one(s), p.config);
}

inline double value_estimate(const PolicyParams& p, const PolicyState& s) { return p.critic.forward_one(s)(0); }

/// log(d torque / d u) for torque = mid + half * tanh(u), computed stably.
inline double squash_log_jacobian(double u, double half_span) {
    const double a = std::abs(u);
    return std::log(half_span) + 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

inline double gaussian_log_density(double x, double mean, double log_std) {
    const double z = (x - mean) * std::exp(-log_std);
    return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * M_PI);
}

struct PolicySample {
    HybridAction action;
    double log_prob = 0.0;
    int gear_choice = 1;       // index into {down, hold, up}
    double pre_squash = 0.0;   // Gaussian draw before tanh
};

inline double torque_from_pre_squash(double u, const PolicyConfig& c) {
    return c.torque_mid() + c.torque_half_span() * std::tanh(u);
}

/// Joint log-density of a hybrid action given its pre-squash draw.
inline double joint_log_prob(const PolicyHeads& h, int gear_choice, double pre_squash, const PolicyConfig& c) {
    return h.log_probs(gear_choice) + gaussian_log_density(pre_squash, h.mean, h.log_std) -
           squash_log_jacobian(pre_squash, c.torque_half_span());
}

template <class Rng>
PolicySample policy_sample(const PolicyParams& p, const PolicyState& s, Rng& rng) {
    const PolicyHeads h = policy_heads(p, s);
    PolicySample out;
    const double u01 = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    out.gear_choice = u01 < h.probs(0) ? 0 : (u01 < h.probs(0) + h.probs(1) ? 1 : 2);
    out.pre_squash = h.mean + std::exp(h.log_std) * std::normal_distribution<double>(0.0, 1.0)(rng);
    out.action.gear_delta = out.gear_choice - 1;
    out.action.torque_proposal_nm = torque_from_pre_squash(out.pre_squash, p.config);
    out.log_prob = joint_log_prob(h, out.gear_choice, out.pre_squash, p.config);
    return out;
}

/// Mode of both heads; used for evaluation runs.
inline HybridAction policy_mode(const PolicyParams& p, const PolicyState& s) {
    const PolicyHeads h = policy_heads(p, s);
    Eigen::Index k = 0;
    h.probs.maxCoeff(&k);
    return {torque_from_pre_squash(h.mean, p.config), static_cast<int>(k) - 1};
}

} // namespace ptcbf
