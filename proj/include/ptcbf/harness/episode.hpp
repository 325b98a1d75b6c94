#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <thread>
#include <vector>

#include "ptcbf/baseline.hpp"
#include "ptcbf/harness/config.hpp"
#include "ptcbf/harness/environment.hpp"
#include "ptcbf/policy.hpp"

namespace ptcbf {

class Controller {
public:
    virtual ~Controller() = default;
    virtual void reset(std::uint64_t /*episode_index*/) {}
    virtual HybridAction act(const Environment& env, const Observation& obs) = 0;
};

/// Feedforward baseline. With the nominal model it plans with the configured
/// vehicle mass on a flat road instead of the episode's true values.
class BaselineController : public Controller {
public:
    explicit BaselineController(BaselineModel model) : model_(model) {}

    HybridAction act(const Environment& env, const Observation&) override {
        if (model_ == BaselineModel::exact) return baseline_action(env.state(), env.desired_accel(), env.vehicle());
        SimState s = env.state();
        s.grade_rad = 0.0;
        return baseline_action(s, env.desired_accel(), env.config().vehicle);
    }

private:
    BaselineModel model_;
};

/// Always requests the largest torque and shifts toward the gear with the
/// most tractive effort.
class AdversarialController : public Controller {
public:
    HybridAction act(const Environment& env, const Observation&) override {
        const SimState& s = env.state();
        const VehicleParams& p = env.vehicle();
        int target = 0;
        double best = -1.0;
        for (int g = 0; g < p.gear_count(); ++g) {
            const double t = max_traction_torque(s.host_speed_m_s, p, g);
            if (t > best) {
                best = t;
                target = g;
            }
        }
        return {std::max(best, p.max_brake_torque_nm), (target > s.gear_index) - (target < s.gear_index)};
    }
};

/// Policy-driven controller; samples when stochastic, otherwise takes the mode.
class PolicyController : public Controller {
public:
    PolicyController(const PolicyParams& policy, bool stochastic, std::uint64_t seed)
        : policy_(policy), stochastic_(stochastic), seed_(seed) {}

    void reset(std::uint64_t episode_index) override { rng_ = episode_rng(seed_, episode_index, 0x5eed); }

    HybridAction act(const Environment&, const Observation& obs) override {
        const PolicyState s = make_policy_state(obs, policy_.scales);
        return stochastic_ ? policy_sample(policy_, s, rng_).action : policy_mode(policy_, s);
    }

private:
    const PolicyParams& policy_;
    bool stochastic_;
    std::uint64_t seed_;
    std::mt19937_64 rng_;
};

struct EpisodeResult {
    EpisodeMetrics metrics;
    std::vector<StepRecord> trace;
};

inline EpisodeResult run_episode(Environment& env, Controller& ctrl, std::uint64_t episode_index,
                                 bool record_trace = true) {
    EpisodeResult out;
    Observation obs = env.reset(episode_index);
    ctrl.reset(episode_index);
    while (!env.done()) {
        const StepRecord r = env.step(ctrl.act(env, obs));
        if (record_trace) out.trace.push_back(r);
        obs = env.observation();
    }
    out.metrics = env.metrics();
    return out;
}

/// Builds the controller named in the config. The rl kind needs a policy.
inline std::unique_ptr<Controller> make_controller(const ExperimentConfig& cfg, ControllerKind kind,
                                                   const PolicyParams* policy, bool stochastic = false) {
    switch (kind) {
        case ControllerKind::baseline: return std::make_unique<BaselineController>(cfg.baseline_model);
        case ControllerKind::adversarial: return std::make_unique<AdversarialController>();
        case ControllerKind::rl:
            if (!policy) throw ConfigError("controller 'rl' needs a policy checkpoint");
            return std::make_unique<PolicyController>(*policy, stochastic, cfg.randomization.seed);
    }
    throw ConfigError("unknown controller kind");
}

inline EpisodeResult run_episode(const ExperimentConfig& cfg, std::uint64_t episode_index,
                                 const PolicyParams* policy = nullptr, bool record_trace = true) {
    Environment env(cfg, cfg.cycle.load(), cfg.filter);
    auto ctrl = make_controller(cfg, cfg.controller, policy);
    return run_episode(env, *ctrl, episode_index, record_trace);
}

struct BatchOptions {
    ControllerKind controller = ControllerKind::baseline;
    FilterKind filter = FilterKind::hocbf;
    std::vector<FilterKind> admission;   // defaults to {filter}
    const PolicyParams* policy = nullptr;
    bool stochastic = false;
    bool record_trace = false;
    unsigned threads = 0;                // 0: hardware concurrency
};

/// Runs episodes [first, first + count) in a worker pool. Results are stored
/// by episode index, so the thread count never changes the output.
inline std::vector<EpisodeResult> run_episodes(const ExperimentConfig& cfg, const DriveCycle& cycle,
                                               std::uint64_t first, int count, const BatchOptions& opt) {
    std::vector<EpisodeResult> results(static_cast<std::size_t>(std::max(count, 0)));
    if (count <= 0) return results;
    unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(count));
    std::vector<std::exception_ptr> errors(threads);
    auto worker = [&](unsigned w) {
        try {
            Environment env(cfg, cycle, opt.filter);
            if (!opt.admission.empty()) env.set_admission_filters(opt.admission);
            auto ctrl = make_controller(cfg, opt.controller, opt.policy, opt.stochastic);
            for (int i = static_cast<int>(w); i < count; i += static_cast<int>(threads))
                results[static_cast<std::size_t>(i)] =
                    run_episode(env, *ctrl, first + static_cast<std::uint64_t>(i), opt.record_trace);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

} // namespace ptcbf
