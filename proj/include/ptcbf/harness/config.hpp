#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ptcbf/driver.hpp"
#include "ptcbf/dynamics.hpp"
#include "ptcbf/policy.hpp"
#include "ptcbf/safety.hpp"
#include "ptcbf/trainer.hpp"

namespace ptcbf {

using json = nlohmann::json;

enum class ControllerKind { rl, baseline, adversarial };

/// What the baseline feedforward believes about the truck: the exact
/// episode parameters, or the nominal (unladen-spec, flat-road) calibration.
enum class BaselineModel { exact, nominal };

inline const char* to_string(ControllerKind k) {
    switch (k) {
        case ControllerKind::rl: return "rl";
        case ControllerKind::baseline: return "baseline";
        case ControllerKind::adversarial: return "adversarial";
    }
    return "?";
}

struct CycleSource {
    std::string kind = "urban";   // urban | highway | sawtooth | csv
    double duration_s = 900.0;
    std::uint64_t seed = 1;
    std::string path;               // csv only

    DriveCycle load() const {
        if (kind == "csv") return load_cycle_csv(path);
        if (kind == "urban") return synthesize_cycle(CycleKind::urban, duration_s, seed);
        if (kind == "highway") return synthesize_cycle(CycleKind::highway, duration_s, seed);
        if (kind == "sawtooth") return synthesize_cycle(CycleKind::sawtooth, duration_s, seed);
        throw ConfigError("cycle: unknown kind '" + kind + "'");
    }
};

/// Hyperparameters of the off-policy optimizer the reward design was tuned
/// with. Kept so a compatible trainer can be plugged in; A2C ignores them.
struct MpoHyperparams {
    double actor_lr = 1e-4;
    double critic_lr = 1e-5;
    double dual_constraint = 0.1;
    int retrace_steps = 1;
    double kl_mean = 0.1;
    double kl_std = 0.001;
    double kl_discrete = 0.1;
    double alpha_d = 10.0;
    double alpha_c = 10.0;
};

struct TrainingConfig {
    long total_steps = 200000;
    int num_envs = 8;
    int rollout_length = 16;
    long steps_per_epoch = 10000;
    std::uint64_t seed = 7;
    PolicyConfig policy;
    TrainerConfig trainer;
    MpoHyperparams mpo;
};

struct EvaluationConfig {
    CycleSource cycle{"urban", 900.0, 9001, ""};
    int episodes = 10;
    std::uint64_t seed = 4242;
    int comparison_episodes = 20;
    /// Sample both policy heads during evaluation; otherwise act on the mode.
    bool sample_policy = true;
};

struct ChecksConfig {
    bool no_crash = true;
    bool fuel_conservation = true;
};

struct ExperimentConfig {
    VehicleParams vehicle;
    SafetyConfig safety;
    FilterKind filter = FilterKind::hocbf;
    ControllerKind controller = ControllerKind::baseline;
    BaselineModel baseline_model = BaselineModel::nominal;
    CycleSource cycle;
    RandomizationSpec randomization;
    IdmParams idm;
    double dt_s = 0.1;
    double episode_length_s = 600.0;
    double lead_out_of_range_timeout_s = 60.0;
    int episodes = 1;
    TrainingConfig training;
    EvaluationConfig evaluation;
    RewardWeights reward;
    ChecksConfig checks;
    std::string output_dir = "out";

    void validate() const {
        vehicle.validate();
        safety.validate();
        randomization.validate();
        idm.validate();
        if (!(dt_s > 0)) throw ConfigError("dt_s must be positive");
        if (!(episode_length_s > 0)) throw ConfigError("episode_length_s must be positive");
        if (episodes < 0) throw ConfigError("episodes must be non-negative");
        if (training.num_envs < 1 || training.rollout_length < 1) throw ConfigError("training: bad rollout shape");
        const TrainerConfig& tr = training.trainer;
        if (!(tr.gamma >= 0 && tr.gamma < 1)) throw ConfigError("trainer: gamma must be in [0, 1)");
        if (!(tr.gae_lambda >= 0 && tr.gae_lambda <= 1)) throw ConfigError("trainer: gae_lambda must be in [0, 1]");
        if (!(tr.actor_lr > 0 && tr.critic_lr > 0)) throw ConfigError("trainer: learning rates must be positive");
        if (!(reward.a_des_max > 0 && reward.fuel_rate_max > 0 && reward.torque_delta_max > 0))
            throw ConfigError("reward: normalizers must be positive");
        if (!(reward.w_a >= 0 && reward.w_f >= 0 && reward.w_T >= 0 && reward.w_g >= 0))
            throw ConfigError("reward: weights must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// JSON mapping. Readers reject keys they do not consume.

namespace detail {

class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    template <class F>
    void sub(const char* key, F&& f) {
        seen_.insert(key);
        if (j_.contains(key)) f(Reader(j_.at(key), where_ + "." + key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
    for (const auto& [name, v] : table)
        if (s == name) return v;
    throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

inline json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

inline void read_range(Reader& r, const char* key, Range& out) {
    std::array<double, 2> a{out.lo, out.hi};
    r.get(key, a);
    out = {a[0], a[1]};
}

} // namespace detail

inline FilterKind parse_filter_kind(const std::string& s) {
    return detail::parse_enum<FilterKind>(
        s, {{"hocbf", FilterKind::hocbf}, {"ecbf", FilterKind::ecbf}, {"none", FilterKind::none}}, "filter");
}

inline ControllerKind parse_controller_kind(const std::string& s) {
    return detail::parse_enum<ControllerKind>(
        s, {{"rl", ControllerKind::rl}, {"baseline", ControllerKind::baseline}, {"adversarial", ControllerKind::adversarial}},
        "controller");
}

inline json to_json(const ExperimentConfig& c) {
    const auto& v = c.vehicle;
    json fuel = {{"kind", v.fuel_model.kind == FuelModelKind::tabulated ? "tabulated" : "synthetic_willans"},
                 {"idle_rate_g_s", v.fuel_model.idle_rate_g_s},
                 {"power_coeff_g_per_kJ", v.fuel_model.power_coeff_g_per_kJ},
                 {"speed_coeff_g_per_krev", v.fuel_model.speed_coeff_g_per_krev}};
    if (v.fuel_model.kind == FuelModelKind::tabulated)
        fuel["table"] = {{"speeds_rpm", v.fuel_model.table.speeds_rpm},
                         {"torques_nm", v.fuel_model.table.torques_nm},
                         {"rates_g_s", v.fuel_model.table.rates_g_s}};
    json vehicle = {{"mass_kg", v.mass_kg},
                    {"frontal_area_m2", v.frontal_area_m2},
                    {"drag_coeff", v.drag_coeff},
                    {"rolling_coeff", v.rolling_coeff},
                    {"wheel_radius_m", v.wheel_radius_m},
                    {"air_density_kg_m3", v.air_density_kg_m3},
                    {"gravity_m_s2", v.gravity_m_s2},
                    {"gear_ratios", v.gear_ratios},
                    {"final_drive_ratio", v.final_drive_ratio},
                    {"driveline_efficiency", v.driveline_efficiency},
                    {"max_engine_torque_nm", v.max_engine_torque_nm},
                    {"max_brake_torque_nm", v.max_brake_torque_nm},
                    {"engine_speed_range_rpm", {v.engine_speed_range_rpm.first, v.engine_speed_range_rpm.second}},
                    {"fuel_model", fuel}};
    const auto& s = c.safety;
    json safety = {{"z0_m", s.z0_m},
                   {"a_host_max_m_s2", s.a_host_max_m_s2},
                   {"a_lead_max_m_s2", s.a_lead_max_m_s2},
                   {"v_host_max_m_s", s.v_host_max_m_s},
                   {"alpha2_gain", s.alpha2_gain},
                   {"ecbf_k1", s.ecbf_k1},
                   {"ecbf_k2", s.ecbf_k2},
                   {"singularity_eps", s.singularity_eps},
                   {"lead_accel_mode", s.lead_accel_mode == LeadAccelMode::measured ? "measured" : "worst_case"},
                   {"region2_form", to_string(s.region2_form)},
                   {"sampled_data", s.sampled_data},
                   {"radar_range_m", s.radar_range_m}};
    auto cycle_json = [](const CycleSource& cs) {
        return json{{"kind", cs.kind}, {"duration_s", cs.duration_s}, {"seed", cs.seed}, {"path", cs.path}};
    };
    const auto& r = c.randomization;
    json rnd = {{"speed_noise_std_m_s", r.speed_noise_std_m_s},
                {"initial_gap_range_m", detail::range_json(r.initial_gap_range_m)},
                {"grade_range_rad", detail::range_json(r.grade_range_rad)},
                {"mass_range_kg", detail::range_json(r.mass_range_kg)},
                {"idm_jitter_fraction", r.idm_jitter_fraction},
                {"seed", r.seed},
                {"start_offset_s", detail::range_json(r.start_offset_s)},
                {"hard_brake_rate_per_min", r.hard_brake_rate_per_min},
                {"hard_brake_duration_s", detail::range_json(r.hard_brake_duration_s)}};
    json idm = {{"desired_speed_m_s", c.idm.desired_speed_m_s}, {"time_headway_s", c.idm.time_headway_s},
                {"min_gap_m", c.idm.min_gap_m},                 {"max_accel_m_s2", c.idm.max_accel_m_s2},
                {"comfort_decel_m_s2", c.idm.comfort_decel_m_s2}, {"accel_exponent", c.idm.accel_exponent}};
    const auto& t = c.training;
    json training = {
        {"total_steps", t.total_steps},
        {"num_envs", t.num_envs},
        {"rollout_length", t.rollout_length},
        {"steps_per_epoch", t.steps_per_epoch},
        {"seed", t.seed},
        {"policy",
         {{"hidden", t.policy.hidden},
          {"torque_min_nm", t.policy.torque_min_nm},
          {"torque_max_nm", t.policy.torque_max_nm},
          {"log_std_min", t.policy.log_std_min},
          {"log_std_max", t.policy.log_std_max},
          {"init_log_std", t.policy.init_log_std}}},
        {"trainer",
         {{"actor_lr", t.trainer.actor_lr},
          {"critic_lr", t.trainer.critic_lr},
          {"gamma", t.trainer.gamma},
          {"gae_lambda", t.trainer.gae_lambda},
          {"entropy_coef_gear", t.trainer.entropy_coef_gear},
          {"entropy_coef_torque", t.trainer.entropy_coef_torque},
          {"max_grad_norm", t.trainer.max_grad_norm},
          {"normalize_advantages", t.trainer.normalize_advantages}}},
        {"mpo",
         {{"actor_lr", t.mpo.actor_lr},
          {"critic_lr", t.mpo.critic_lr},
          {"dual_constraint", t.mpo.dual_constraint},
          {"retrace_steps", t.mpo.retrace_steps},
          {"kl_mean", t.mpo.kl_mean},
          {"kl_std", t.mpo.kl_std},
          {"kl_discrete", t.mpo.kl_discrete},
          {"alpha_d", t.mpo.alpha_d},
          {"alpha_c", t.mpo.alpha_c}}}};
    json evaluation = {{"cycle", cycle_json(c.evaluation.cycle)},
                       {"episodes", c.evaluation.episodes},
                       {"seed", c.evaluation.seed},
                       {"comparison_episodes", c.evaluation.comparison_episodes},
                       {"sample_policy", c.evaluation.sample_policy}};
    const auto& w = c.reward;
    json reward = {{"w_a", w.w_a},
                   {"w_f", w.w_f},
                   {"w_T", w.w_T},
                   {"w_g", w.w_g},
                   {"a_des_max", w.a_des_max},
                   {"fuel_rate_max", w.fuel_rate_max},
                   {"torque_delta_max", w.torque_delta_max}};
    return json{{"vehicle", vehicle},
                {"safety", safety},
                {"filter", to_string(c.filter)},
                {"controller", to_string(c.controller)},
                {"baseline_model", c.baseline_model == BaselineModel::exact ? "exact" : "nominal"},
                {"cycle", cycle_json(c.cycle)},
                {"randomization", rnd},
                {"idm", idm},
                {"dt_s", c.dt_s},
                {"episode_length_s", c.episode_length_s},
                {"lead_out_of_range_timeout_s", c.lead_out_of_range_timeout_s},
                {"episodes", c.episodes},
                {"training", training},
                {"evaluation", evaluation},
                {"reward", reward},
                {"checks", {{"no_crash", c.checks.no_crash}, {"fuel_conservation", c.checks.fuel_conservation}}},
                {"output_dir", c.output_dir}};
}

inline ExperimentConfig config_from_json(const json& j) {
    using detail::Reader;
    ExperimentConfig c;
    Reader root(j, "config");
    auto read_cycle = [](Reader r, CycleSource& cs) {
        r.get("kind", cs.kind);
        r.get("duration_s", cs.duration_s);
        r.get("seed", cs.seed);
        r.get("path", cs.path);
        r.finish();
    };
    root.sub("vehicle", [&](Reader r) {
        auto& v = c.vehicle;
        r.get("mass_kg", v.mass_kg);
        r.get("frontal_area_m2", v.frontal_area_m2);
        r.get("drag_coeff", v.drag_coeff);
        r.get("rolling_coeff", v.rolling_coeff);
        r.get("wheel_radius_m", v.wheel_radius_m);
        r.get("air_density_kg_m3", v.air_density_kg_m3);
        r.get("gravity_m_s2", v.gravity_m_s2);
        r.get("gear_ratios", v.gear_ratios);
        r.get("final_drive_ratio", v.final_drive_ratio);
        r.get("driveline_efficiency", v.driveline_efficiency);
        r.get("max_engine_torque_nm", v.max_engine_torque_nm);
        r.get("max_brake_torque_nm", v.max_brake_torque_nm);
        std::array<double, 2> rpm{v.engine_speed_range_rpm.first, v.engine_speed_range_rpm.second};
        r.get("engine_speed_range_rpm", rpm);
        v.engine_speed_range_rpm = {rpm[0], rpm[1]};
        r.sub("fuel_model", [&](Reader f) {
            std::string kind = "synthetic_willans";
            f.get("kind", kind);
            v.fuel_model.kind = detail::parse_enum<FuelModelKind>(
                kind, {{"synthetic_willans", FuelModelKind::synthetic_willans}, {"tabulated", FuelModelKind::tabulated}},
                "fuel model");
            f.get("idle_rate_g_s", v.fuel_model.idle_rate_g_s);
            f.get("power_coeff_g_per_kJ", v.fuel_model.power_coeff_g_per_kJ);
            f.get("speed_coeff_g_per_krev", v.fuel_model.speed_coeff_g_per_krev);
            std::string csv;
            f.get("csv_path", csv);
            if (!csv.empty()) v.fuel_model.table = load_fuel_table(csv);
            f.sub("table", [&](Reader t) {
                t.get("speeds_rpm", v.fuel_model.table.speeds_rpm);
                t.get("torques_nm", v.fuel_model.table.torques_nm);
                t.get("rates_g_s", v.fuel_model.table.rates_g_s);
                t.finish();
            });
            f.finish();
        });
        r.finish();
    });
    root.sub("safety", [&](Reader r) {
        auto& s = c.safety;
        r.get("z0_m", s.z0_m);
        r.get("a_host_max_m_s2", s.a_host_max_m_s2);
        r.get("a_lead_max_m_s2", s.a_lead_max_m_s2);
        r.get("v_host_max_m_s", s.v_host_max_m_s);
        r.get("alpha2_gain", s.alpha2_gain);
        r.get("ecbf_k1", s.ecbf_k1);
        r.get("ecbf_k2", s.ecbf_k2);
        r.get("singularity_eps", s.singularity_eps);
        std::string mode = "measured";
        r.get("lead_accel_mode", mode);
        s.lead_accel_mode = detail::parse_enum<LeadAccelMode>(
            mode, {{"measured", LeadAccelMode::measured}, {"worst_case", LeadAccelMode::worst_case}}, "lead_accel_mode");
        std::string form = to_string(s.region2_form);
        r.get("region2_form", form);
        s.region2_form = detail::parse_enum<Region2Form>(
            form, {{"exact", Region2Form::exact}, {"gap_envelope", Region2Form::gap_envelope}}, "region2_form");
        r.get("sampled_data", s.sampled_data);
        r.get("radar_range_m", s.radar_range_m);
        r.finish();
    });
    std::string filter = to_string(c.filter), controller = to_string(c.controller), baseline = "nominal";
    root.get("filter", filter);
    root.get("controller", controller);
    root.get("baseline_model", baseline);
    c.filter = parse_filter_kind(filter);
    c.controller = parse_controller_kind(controller);
    c.baseline_model = detail::parse_enum<BaselineModel>(
        baseline, {{"exact", BaselineModel::exact}, {"nominal", BaselineModel::nominal}}, "baseline_model");
    root.sub("cycle", [&](Reader r) { read_cycle(std::move(r), c.cycle); });
    root.sub("randomization", [&](Reader r) {
        auto& x = c.randomization;
        r.get("speed_noise_std_m_s", x.speed_noise_std_m_s);
        detail::read_range(r, "initial_gap_range_m", x.initial_gap_range_m);
        detail::read_range(r, "grade_range_rad", x.grade_range_rad);
        detail::read_range(r, "mass_range_kg", x.mass_range_kg);
        r.get("idm_jitter_fraction", x.idm_jitter_fraction);
        r.get("seed", x.seed);
        detail::read_range(r, "start_offset_s", x.start_offset_s);
        r.get("hard_brake_rate_per_min", x.hard_brake_rate_per_min);
        detail::read_range(r, "hard_brake_duration_s", x.hard_brake_duration_s);
        r.finish();
    });
    root.sub("idm", [&](Reader r) {
        r.get("desired_speed_m_s", c.idm.desired_speed_m_s);
        r.get("time_headway_s", c.idm.time_headway_s);
        r.get("min_gap_m", c.idm.min_gap_m);
        r.get("max_accel_m_s2", c.idm.max_accel_m_s2);
        r.get("comfort_decel_m_s2", c.idm.comfort_decel_m_s2);
        r.get("accel_exponent", c.idm.accel_exponent);
        r.finish();
    });
    root.get("dt_s", c.dt_s);
    root.get("episode_length_s", c.episode_length_s);
    root.get("lead_out_of_range_timeout_s", c.lead_out_of_range_timeout_s);
    root.get("episodes", c.episodes);
    root.sub("training", [&](Reader r) {
        auto& t = c.training;
        r.get("total_steps", t.total_steps);
        r.get("num_envs", t.num_envs);
        r.get("rollout_length", t.rollout_length);
        r.get("steps_per_epoch", t.steps_per_epoch);
        r.get("seed", t.seed);
        r.sub("policy", [&](Reader p) {
            p.get("hidden", t.policy.hidden);
            p.get("torque_min_nm", t.policy.torque_min_nm);
            p.get("torque_max_nm", t.policy.torque_max_nm);
            p.get("log_std_min", t.policy.log_std_min);
            p.get("log_std_max", t.policy.log_std_max);
            p.get("init_log_std", t.policy.init_log_std);
            p.finish();
        });
        r.sub("trainer", [&](Reader p) {
            p.get("actor_lr", t.trainer.actor_lr);
            p.get("critic_lr", t.trainer.critic_lr);
            p.get("gamma", t.trainer.gamma);
            p.get("gae_lambda", t.trainer.gae_lambda);
            p.get("entropy_coef_gear", t.trainer.entropy_coef_gear);
            p.get("entropy_coef_torque", t.trainer.entropy_coef_torque);
            p.get("max_grad_norm", t.trainer.max_grad_norm);
            p.get("normalize_advantages", t.trainer.normalize_advantages);
            p.finish();
        });
        r.sub("mpo", [&](Reader p) {
            p.get("actor_lr", t.mpo.actor_lr);
            p.get("critic_lr", t.mpo.critic_lr);
            p.get("dual_constraint", t.mpo.dual_constraint);
            p.get("retrace_steps", t.mpo.retrace_steps);
            p.get("kl_mean", t.mpo.kl_mean);
            p.get("kl_std", t.mpo.kl_std);
            p.get("kl_discrete", t.mpo.kl_discrete);
            p.get("alpha_d", t.mpo.alpha_d);
            p.get("alpha_c", t.mpo.alpha_c);
            p.finish();
        });
        r.finish();
    });
    root.sub("evaluation", [&](Reader r) {
        r.sub("cycle", [&](Reader cr) { read_cycle(std::move(cr), c.evaluation.cycle); });
        r.get("episodes", c.evaluation.episodes);
        r.get("seed", c.evaluation.seed);
        r.get("comparison_episodes", c.evaluation.comparison_episodes);
        r.get("sample_policy", c.evaluation.sample_policy);
        r.finish();
    });
    root.sub("reward", [&](Reader r) {
        r.get("w_a", c.reward.w_a);
        r.get("w_f", c.reward.w_f);
        r.get("w_T", c.reward.w_T);
        r.get("w_g", c.reward.w_g);
        r.get("a_des_max", c.reward.a_des_max);
        r.get("fuel_rate_max", c.reward.fuel_rate_max);
        r.get("torque_delta_max", c.reward.torque_delta_max);
        r.finish();
    });
    root.sub("checks", [&](Reader r) {
        r.get("no_crash", c.checks.no_crash);
        r.get("fuel_conservation", c.checks.fuel_conservation);
        r.finish();
    });
    root.get("output_dir", c.output_dir);
    root.finish();
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open config");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(path, e.what());
    }
    return config_from_json(j);
}

/// FNV-1a over the canonical (sorted-key, compact) serialization.
inline std::string config_hash(const ExperimentConfig& c) {
    const std::string s = to_json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace ptcbf
