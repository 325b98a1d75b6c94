#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptcbf/errors.hpp"
#include "ptcbf/nn.hpp"
#include "ptcbf/policy.hpp"

namespace ptcbf {

/// Contiguous steps from one episode. `bootstrap_state` is the state reached
/// after the last step; it is ignored when `terminal` is set.
struct Rollout {
    std::vector<PolicyState> states;
    std::vector<int> gear_choices;
    std::vector<double> pre_squash;
    std::vector<double> rewards;
    PolicyState bootstrap_state = PolicyState::Zero();
    bool terminal = false;

    std::size_t size() const { return rewards.size(); }
};

using Batch = std::vector<Rollout>;

struct TrainerConfig {
    double actor_lr = 1e-4;
    double critic_lr = 1e-5;
    double gamma = 0.95;
    /// Actor advantages use GAE(lambda); 1 gives the plain n-step advantage.
    double gae_lambda = 1.0;
    double entropy_coef_gear = 0.01;
    double entropy_coef_torque = 0.001;
    double max_grad_norm = 1.0;
    bool normalize_advantages = true;
};

struct TrainDiagnostics {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double entropy_gear = 0.0;
    double entropy_torque = 0.0;
    double actor_grad_norm = 0.0;
    double critic_grad_norm = 0.0;
    double mean_return = 0.0;
    std::size_t samples = 0;
};

/// Flattened batch, one sample per column.
struct FlatBatch {
    Eigen::MatrixXd states;
    std::vector<int> gear_choices;
    Eigen::VectorXd pre_squash;
};

inline FlatBatch flatten(const Batch& batch) {
    std::size_t n = 0;
    for (const auto& r : batch) n += r.size();
    FlatBatch f;
    f.states.resize(kFeatureCount, static_cast<Eigen::Index>(n));
    f.pre_squash.resize(static_cast<Eigen::Index>(n));
    f.gear_choices.reserve(n);
    Eigen::Index k = 0;
    for (const auto& r : batch) {
        for (std::size_t t = 0; t < r.size(); ++t, ++k) {
            f.states.col(k) = r.states[t];
            f.pre_squash(k) = r.pre_squash[t];
            f.gear_choices.push_back(r.gear_choices[t]);
        }
    }
    return f;
}

/// Bootstrapped discounted returns, computed backwards through each rollout.
inline Eigen::VectorXd discounted_returns(const Batch& batch, const nn::Mlp& critic, double gamma) {
    std::size_t n = 0;
    for (const auto& r : batch) n += r.size();
    Eigen::VectorXd out(static_cast<Eigen::Index>(n));
    Eigen::Index base = 0;
    for (const auto& r : batch) {
        double ret = r.terminal ? 0.0 : critic.forward_one(r.bootstrap_state)(0);
        for (std::size_t t = r.size(); t-- > 0;) {
            ret = r.rewards[t] + gamma * ret;
            out(base + static_cast<Eigen::Index>(t)) = ret;
        }
        base += static_cast<Eigen::Index>(r.size());
    }
    return out;
}

/// Generalized advantage estimates given per-sample critic values (in
/// flattened batch order). With lambda = 1 this equals returns - values.
inline Eigen::VectorXd gae_advantages(const Batch& batch, const Eigen::VectorXd& values, const nn::Mlp& critic,
                                      double gamma, double lambda) {
    Eigen::VectorXd out(values.size());
    Eigen::Index base = 0;
    for (const auto& r : batch) {
        double next_value = r.terminal ? 0.0 : critic.forward_one(r.bootstrap_state)(0);
        double acc = 0.0;
        for (std::size_t t = r.size(); t-- > 0;) {
            const Eigen::Index i = base + static_cast<Eigen::Index>(t);
            const double delta = r.rewards[t] + gamma * next_value - values(i);
            acc = delta + gamma * lambda * acc;
            out(i) = acc;
            next_value = values(i);
        }
        base += static_cast<Eigen::Index>(r.size());
    }
    return out;
}

struct ActorLossCoefs {
    double entropy_gear = 0.0;
    double entropy_torque = 0.0;
};

struct LossResult {
    double loss = 0.0;
    double entropy_gear = 0.0;
    double entropy_torque = 0.0;
};

/// Negative advantage-weighted joint log-likelihood minus entropy bonuses,
/// averaged over the batch. Writes the parameter gradient when `grad` is set.
inline LossResult actor_loss(const PolicyParams& p, const FlatBatch& b, const Eigen::VectorXd& advantages,
                             const ActorLossCoefs& coefs, Eigen::VectorXd* grad) {
    nn::Mlp::Cache cache;
    const Eigen::MatrixXd out = p.actor.forward(b.states, grad ? &cache : nullptr);
    const Eigen::Index n = out.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double span = p.config.log_std_max - p.config.log_std_min;
    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(out.rows(), n);
    LossResult r;
    for (Eigen::Index i = 0; i < n; ++i) {
        const PolicyHeads h = heads_from_output(out.col(i), p.config);
        const int k = b.gear_choices[static_cast<std::size_t>(i)];
        const double a = advantages(i);
        const double u = b.pre_squash(i);
        const double sigma = std::exp(h.log_std);
        const double z = (u - h.mean) / sigma;
        const double h_cat = -(h.probs.array() * h.log_probs.array()).sum();
        const double h_gauss = 0.5 * std::log(2.0 * M_PI * M_E) + h.log_std;
        const double logp = h.log_probs(k) - 0.5 * z * z - h.log_std;
        r.loss += inv_n * (-a * logp - coefs.entropy_gear * h_cat - coefs.entropy_torque * h_gauss);
        r.entropy_gear += inv_n * h_cat;
        r.entropy_torque += inv_n * h_gauss;
        if (!grad) continue;
        for (int j = 0; j < 3; ++j) {
            const double dlogp = (j == k ? 1.0 : 0.0) - h.probs(j);
            const double dh = -h.probs(j) * (h.log_probs(j) + h_cat);
            d_out(j, i) = inv_n * (-a * dlogp - coefs.entropy_gear * dh);
        }
        d_out(PolicyParams::kMeanOut, i) = inv_n * (-a * z / sigma);
        const double d_log_std = inv_n * (-a * (z * z - 1.0) - coefs.entropy_torque);
        const double s = sigmoid(out(PolicyParams::kStdOut, i));
        d_out(PolicyParams::kStdOut, i) = d_log_std * span * s * (1.0 - s);
    }
    if (grad) {
        grad->setZero(p.actor.param_count());
        p.actor.backward(cache, d_out, *grad);
    }
    return r;
}

/// Half mean squared error between critic outputs and `targets`.
inline double critic_loss(const nn::Mlp& critic, const Eigen::MatrixXd& states, const Eigen::VectorXd& targets,
                          Eigen::VectorXd* grad) {
    nn::Mlp::Cache cache;
    const Eigen::MatrixXd v = critic.forward(states, grad ? &cache : nullptr);
    const Eigen::VectorXd err = v.row(0).transpose() - targets;
    const double inv_n = 1.0 / static_cast<double>(targets.size());
    if (grad) {
        grad->setZero(critic.param_count());
        critic.backward(cache, (inv_n * err).transpose(), *grad);
    }
    return 0.5 * inv_n * err.squaredNorm();
}

/// Pluggable policy optimizer.
class Trainer {
public:
    virtual ~Trainer() = default;
    virtual TrainDiagnostics train_step(PolicyParams& policy, const Batch& batch) = 0;
    virtual std::string name() const = 0;
};

/// Synchronous advantage actor-critic with entropy regularization.
class A2cTrainer : public Trainer {
public:
    A2cTrainer(const PolicyParams& p, TrainerConfig cfg)
        : cfg_(cfg),
          actor_opt_(p.actor.param_count(), cfg.actor_lr),
          critic_opt_(p.critic.param_count(), cfg.critic_lr) {}

    std::string name() const override { return "a2c"; }
    const TrainerConfig& config() const { return cfg_; }
    nn::Adam& actor_optimizer() { return actor_opt_; }
    nn::Adam& critic_optimizer() { return critic_opt_; }
    const nn::Adam& actor_optimizer() const { return actor_opt_; }
    const nn::Adam& critic_optimizer() const { return critic_opt_; }

    TrainDiagnostics train_step(PolicyParams& policy, const Batch& batch) override {
        const FlatBatch flat = flatten(batch);
        if (flat.states.cols() == 0) throw OutOfRange("train_step: empty batch");
        const Eigen::VectorXd returns = discounted_returns(batch, policy.critic, cfg_.gamma);
        const Eigen::VectorXd values = policy.critic.forward(flat.states).row(0).transpose();
        Eigen::VectorXd adv = cfg_.gae_lambda == 1.0
                                  ? Eigen::VectorXd(returns - values)
                                  : gae_advantages(batch, values, policy.critic, cfg_.gamma, cfg_.gae_lambda);
        if (cfg_.normalize_advantages && adv.size() > 1) {
            const double mean = adv.mean();
            const double sd = std::sqrt((adv.array() - mean).square().mean());
            adv = (adv.array() - mean) / (sd + 1e-8);
        }

        Eigen::VectorXd g_actor, g_critic;
        TrainDiagnostics d;
        const LossResult al =
            actor_loss(policy, flat, adv, {cfg_.entropy_coef_gear, cfg_.entropy_coef_torque}, &g_actor);
        d.critic_loss = critic_loss(policy.critic, flat.states, returns, &g_critic);
        d.actor_loss = al.loss;
        d.entropy_gear = al.entropy_gear;
        d.entropy_torque = al.entropy_torque;
        d.mean_return = returns.mean();
        d.samples = static_cast<std::size_t>(flat.states.cols());
        if (!g_actor.allFinite() || !g_critic.allFinite() || !std::isfinite(d.critic_loss) ||
            !std::isfinite(d.actor_loss))
            throw NonFiniteGradient("non-finite gradient in train_step");
        d.actor_grad_norm = nn::clip_grad_norm(g_actor, cfg_.max_grad_norm);
        d.critic_grad_norm = nn::clip_grad_norm(g_critic, cfg_.max_grad_norm);
        actor_opt_.step(policy.actor.params(), g_actor);
        critic_opt_.step(policy.critic.params(), g_critic);
        return d;
    }

private:
    TrainerConfig cfg_;
    nn::Adam actor_opt_;
    nn::Adam critic_opt_;
};

} // namespace ptcbf
