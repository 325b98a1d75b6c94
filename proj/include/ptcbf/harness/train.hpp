#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ptcbf/harness/checkpoint.hpp"
#include "ptcbf/harness/config.hpp"
#include "ptcbf/harness/environment.hpp"
#include "ptcbf/trainer.hpp"

namespace ptcbf {

struct EpochStats {
    int epoch = 0;
    long steps = 0;
    double mean_reward = 0.0;
    std::array<double, 4> mean_reward_terms{};
    double smoothed_reward = 0.0;
    long crashes = 0;
    double intervention_rate = 0.0;
    long episodes_finished = 0;
    double critic_loss = 0.0;
    double entropy_gear = 0.0;
    double entropy_torque = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochStats> curve;
    long total_crashes = 0;
    bool aborted = false;
    std::string abort_reason;
};

/// Mean of the last `window` epoch means.
inline double smoothed_reward(const std::vector<EpochStats>& curve, std::size_t window = 3) {
    if (curve.empty()) return 0.0;
    const std::size_t n = std::min(window, curve.size());
    double s = 0.0;
    for (std::size_t i = curve.size() - n; i < curve.size(); ++i) s += curve[i].mean_reward;
    return s / static_cast<double>(n);
}

/// Synchronous A2C over `num_envs` environments stepped in lockstep-free
/// round robin. Every random draw comes from the config seeds.
inline TrainResult train(const ExperimentConfig& cfg, const std::function<void(const EpochStats&)>& on_epoch = {}) {
    if (cfg.controller != ControllerKind::rl) throw ConfigError("train requires controller 'rl'");
    const TrainingConfig& tc = cfg.training;
    const DriveCycle cycle = cfg.cycle.load();

    TrainResult out;
    Checkpoint& ck = out.checkpoint;
    ck.config_hash = config_hash(cfg);
    ck.rng.seed(tc.seed);
    ck.policy = PolicyParams::create(tc.policy, ck.rng);
    A2cTrainer trainer(ck.policy, tc.trainer);

    const int k_envs = tc.num_envs;
    std::vector<Environment> envs;
    std::vector<Observation> obs;
    for (int k = 0; k < k_envs; ++k) {
        envs.emplace_back(cfg, cycle, cfg.filter);
        obs.push_back(envs.back().reset(ck.next_episode++));
    }

    EpochStats epoch;
    long epoch_steps = 0, epoch_interventions = 0, epoch_updates = 0;
    auto close_epoch = [&]() {
        if (epoch_steps == 0) return;
        const double n = static_cast<double>(epoch_steps);
        epoch.mean_reward /= n;
        for (auto& t : epoch.mean_reward_terms) t /= n;
        epoch.intervention_rate = static_cast<double>(epoch_interventions) / n;
        if (epoch_updates > 0) {
            epoch.critic_loss /= static_cast<double>(epoch_updates);
            epoch.entropy_gear /= static_cast<double>(epoch_updates);
            epoch.entropy_torque /= static_cast<double>(epoch_updates);
        }
        epoch.steps = ck.steps;
        out.curve.push_back(epoch);
        out.curve.back().smoothed_reward = smoothed_reward(out.curve);
        if (on_epoch) on_epoch(out.curve.back());
        const int next = epoch.epoch + 1;
        epoch = EpochStats{};
        epoch.epoch = next;
        epoch_steps = epoch_interventions = epoch_updates = 0;
    };

    while (ck.steps < tc.total_steps) {
        Batch batch;
        for (int k = 0; k < k_envs && ck.steps < tc.total_steps; ++k) {
            Environment& env = envs[static_cast<std::size_t>(k)];
            Rollout ro;
            for (int t = 0; t < tc.rollout_length && ck.steps < tc.total_steps; ++t) {
                const PolicyState s = make_policy_state(obs[static_cast<std::size_t>(k)], ck.policy.scales);
                const PolicySample smp = policy_sample(ck.policy, s, ck.rng);
                const StepRecord r = env.step(smp.action);
                ro.states.push_back(s);
                ro.gear_choices.push_back(smp.gear_choice);
                ro.pre_squash.push_back(smp.pre_squash);
                ro.rewards.push_back(r.reward.total());
                ++ck.steps;
                ++epoch_steps;
                epoch.mean_reward += r.reward.total();
                const auto terms = r.reward.as_array();
                for (int i = 0; i < 4; ++i) epoch.mean_reward_terms[i] += terms[i];
                epoch_interventions += r.intervened ? 1 : 0;
                obs[static_cast<std::size_t>(k)] = env.observation();
                if (env.done()) break;
            }
            // Episodes end on time limits only, so the tail is bootstrapped.
            ro.bootstrap_state = make_policy_state(obs[static_cast<std::size_t>(k)], ck.policy.scales);
            batch.push_back(std::move(ro));
            if (env.done()) {
                const EpisodeMetrics m = env.metrics();
                epoch.crashes += m.crash_count;
                out.total_crashes += m.crash_count;
                ++epoch.episodes_finished;
                obs[static_cast<std::size_t>(k)] = env.reset(ck.next_episode++);
            }
        }
        try {
            const TrainDiagnostics d = trainer.train_step(ck.policy, batch);
            epoch.critic_loss += d.critic_loss;
            epoch.entropy_gear += d.entropy_gear;
            epoch.entropy_torque += d.entropy_torque;
            ++epoch_updates;
        } catch (const NonFiniteGradient& e) {
            out.aborted = true;
            out.abort_reason = e.what();
            break;
        }
        if (epoch_steps >= tc.steps_per_epoch) close_epoch();
    }
    for (const auto& env : envs)
        if (!env.done()) {
            const long c = env.metrics().crash_count;
            epoch.crashes += c;
            out.total_crashes += c;
        }
    close_epoch();
    ck.epoch = static_cast<int>(out.curve.size());
    ck.actor_opt = trainer.actor_optimizer();
    ck.critic_opt = trainer.critic_optimizer();
    return out;
}

} // namespace ptcbf
