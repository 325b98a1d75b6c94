#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ptcbf/errors.hpp"
#include "ptcbf/nn.hpp"
#include "ptcbf/policy.hpp"

namespace ptcbf {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::string config_hash;
    long steps = 0;
    int epoch = 0;
    PolicyParams policy;
    nn::Adam actor_opt;
    nn::Adam critic_opt;
    std::mt19937_64 rng;
    std::uint64_t next_episode = 0;
};

namespace detail {

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
    return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json mlp_json(const nn::Mlp& m) { return {{"widths", m.widths()}, {"params", vec_json(m.params())}}; }

inline nn::Mlp mlp_from_json(const nlohmann::json& j) {
    nn::Mlp m(j.at("widths").get<std::vector<int>>());
    const Eigen::VectorXd p = vec_from_json(j.at("params"));
    if (p.size() != m.param_count()) throw ConfigError("checkpoint: parameter count mismatch");
    m.params() = p;
    return m;
}

inline nlohmann::json adam_json(const nn::Adam& a) {
    return {{"lr", a.lr()}, {"t", a.steps()}, {"m", vec_json(a.first_moment())}, {"v", vec_json(a.second_moment())}};
}

inline nn::Adam adam_from_json(const nlohmann::json& j) {
    Eigen::VectorXd m = vec_from_json(j.at("m")), v = vec_from_json(j.at("v"));
    nn::Adam a(m.size(), j.at("lr").get<double>());
    a.restore(j.at("t").get<long>(), std::move(m), std::move(v));
    return a;
}

} // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    std::ostringstream rng;
    rng << c.rng;
    const auto& pc = c.policy.config;
    return {{"format", "ptcbf-checkpoint"},
            {"version", kCheckpointVersion},
            {"config_hash", c.config_hash},
            {"steps", c.steps},
            {"epoch", c.epoch},
            {"next_episode", c.next_episode},
            {"policy",
             {{"hidden", pc.hidden},
              {"torque_min_nm", pc.torque_min_nm},
              {"torque_max_nm", pc.torque_max_nm},
              {"log_std_min", pc.log_std_min},
              {"log_std_max", pc.log_std_max},
              {"init_log_std", pc.init_log_std},
              {"scales", c.policy.scales},
              {"actor", detail::mlp_json(c.policy.actor)},
              {"critic", detail::mlp_json(c.policy.critic)}}},
            {"optimizer", {{"actor", detail::adam_json(c.actor_opt)}, {"critic", detail::adam_json(c.critic_opt)}}},
            {"rng", rng.str()}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "ptcbf-checkpoint") throw ConfigError("not a checkpoint file");
        if (j.at("version").get<int>() != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
        Checkpoint c;
        c.config_hash = j.at("config_hash").get<std::string>();
        c.steps = j.at("steps").get<long>();
        c.epoch = j.at("epoch").get<int>();
        c.next_episode = j.at("next_episode").get<std::uint64_t>();
        const auto& p = j.at("policy");
        c.policy.config.hidden = p.at("hidden").get<std::vector<int>>();
        c.policy.config.torque_min_nm = p.at("torque_min_nm").get<double>();
        c.policy.config.torque_max_nm = p.at("torque_max_nm").get<double>();
        c.policy.config.log_std_min = p.at("log_std_min").get<double>();
        c.policy.config.log_std_max = p.at("log_std_max").get<double>();
        c.policy.config.init_log_std = p.at("init_log_std").get<double>();
        c.policy.scales = p.at("scales").get<FeatureScales>();
        c.policy.actor = detail::mlp_from_json(p.at("actor"));
        c.policy.critic = detail::mlp_from_json(p.at("critic"));
        c.actor_opt = detail::adam_from_json(j.at("optimizer").at("actor"));
        c.critic_opt = detail::adam_from_json(j.at("optimizer").at("critic"));
        std::istringstream rng(j.at("rng").get<std::string>());
        rng >> c.rng;
        if (!rng) throw ConfigError("checkpoint: bad rng state");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot write checkpoint");
    out << checkpoint_to_json(c).dump(1) << '\n';
    if (!out) throw IoError(path, "write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open checkpoint");
    try {
        return checkpoint_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path, e.what());
    }
}

} // namespace ptcbf
