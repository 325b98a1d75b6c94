#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ptcbf/harness/config.hpp"
#include "ptcbf/harness/episode.hpp"
#include "ptcbf/harness/train.hpp"
#include "ptcbf/safety.hpp"

namespace ptcbf {

struct RunOutputs {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<EpisodeResult> episodes;
    std::vector<EpochStats> learning_curve;
    std::vector<SafeSetCell> safeset;
};

/// Shortest round-trip decimal form.
inline std::string fmt_num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, r.ptr);
}

inline json metrics_json(const EpisodeMetrics& m) {
    return {{"episode_index", m.episode_index},
            {"seed", m.seed},
            {"steps", m.steps},
            {"crash_count", m.crash_count},
            {"min_gap_m", std::isfinite(m.min_gap_m) ? json(m.min_gap_m) : json(nullptr)},
            {"fuel_g", m.fuel_g},
            {"distance_m", m.distance_m},
            {"mpg", m.mpg},
            {"a_rms", m.a_rms},
            {"mean_reward_terms", m.mean_reward_terms},
            {"mean_reward", m.mean_reward},
            {"intervention_rate", m.intervention_rate},
            {"infeasible_steps", m.infeasible_steps},
            {"mean_approach_rate_m_s", m.mean_approach_rate_m_s}};
}

inline EpisodeMetrics metrics_from_json(const json& j) {
    EpisodeMetrics m;
    m.episode_index = j.at("episode_index").get<std::uint64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.steps = j.at("steps").get<long>();
    m.crash_count = j.at("crash_count").get<long>();
    m.min_gap_m = j.at("min_gap_m").is_null() ? std::numeric_limits<double>::infinity() : j.at("min_gap_m").get<double>();
    m.fuel_g = j.at("fuel_g").get<double>();
    m.distance_m = j.at("distance_m").get<double>();
    m.mpg = j.at("mpg").get<double>();
    m.a_rms = j.at("a_rms").get<double>();
    m.mean_reward_terms = j.at("mean_reward_terms").get<std::array<double, 4>>();
    m.mean_reward = j.at("mean_reward").get<double>();
    m.intervention_rate = j.at("intervention_rate").get<double>();
    m.infeasible_steps = j.at("infeasible_steps").get<long>();
    m.mean_approach_rate_m_s = j.at("mean_approach_rate_m_s").get<double>();
    return m;
}

struct MetricsFile {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<EpisodeMetrics> episodes;
};

inline MetricsFile load_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open metrics file");
    try {
        const json j = json::parse(in);
        MetricsFile f;
        f.config_hash = j.at("config_hash").get<std::string>();
        f.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& e : j.at("episodes")) f.episodes.push_back(metrics_from_json(e));
        return f;
    } catch (const json::exception& e) {
        throw IoError(path, e.what());
    }
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw IoError(p.string(), "cannot open for writing");
    return out;
}

inline void close_output(std::ofstream& out, const std::filesystem::path& p) {
    out.close();
    if (!out) throw IoError(p.string(), "write failed");
}

inline void write_provenance(std::ostream& out, const RunOutputs& r) {
    out << "# config_hash=" << r.config_hash << " seed=" << r.seed << '\n';
}

} // namespace detail

inline void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& trace) {
    out << "time_s,z_m,v_h_m_s,v_l_m_s,gear,T_a_nm,T_t_nm,v0,v1,v2,r_accommodation,r_fuel,r_torque,r_gear,"
           "a_des_m_s2,a_m_s2,a_lead_m_s2,fuel_rate_g_s,gear_delta,intervened,infeasible\n";
    for (const auto& r : trace) {
        out << fmt_num(r.time_s) << ',' << fmt_num(r.separation_m) << ',' << fmt_num(r.host_speed_m_s) << ','
            << fmt_num(r.lead_speed_m_s) << ',' << r.gear_index << ',' << fmt_num(r.proposed_torque_nm) << ','
            << fmt_num(r.applied_torque_nm) << ',' << fmt_num(r.v0) << ',' << fmt_num(r.v1) << ',' << fmt_num(r.v2)
            << ',' << fmt_num(r.reward.accommodation) << ',' << fmt_num(r.reward.fuel) << ','
            << fmt_num(r.reward.torque) << ',' << fmt_num(r.reward.gear) << ',' << fmt_num(r.desired_accel_m_s2)
            << ',' << fmt_num(r.accel_m_s2) << ',' << fmt_num(r.lead_accel_m_s2) << ',' << fmt_num(r.fuel_rate_g_s)
            << ',' << r.gear_delta << ',' << (r.intervened ? 1 : 0) << ',' << (r.infeasible ? 1 : 0) << '\n';
    }
}

inline void write_safeset_csv(std::ostream& out, const std::vector<SafeSetCell>& cells) {
    out << "z_m,v_h_m_s,region,min_lead_speed_m_s,possible_safe\n";
    for (const auto& c : cells)
        out << fmt_num(c.z_m) << ',' << fmt_num(c.v_h_m_s) << ',' << to_string(c.region) << ','
            << fmt_num(c.min_lead_speed_m_s) << ',' << (c.possible_safe ? 1 : 0) << '\n';
}

inline void write_learning_curve_csv(std::ostream& out, const std::vector<EpochStats>& curve) {
    out << "epoch,steps,mean_reward,smoothed_reward,r_accommodation,r_fuel,r_torque,r_gear,crashes,"
           "intervention_rate,episodes_finished,critic_loss,entropy_gear,entropy_torque\n";
    for (const auto& e : curve)
        out << e.epoch << ',' << e.steps << ',' << fmt_num(e.mean_reward) << ',' << fmt_num(e.smoothed_reward) << ','
            << fmt_num(e.mean_reward_terms[0]) << ',' << fmt_num(e.mean_reward_terms[1]) << ','
            << fmt_num(e.mean_reward_terms[2]) << ',' << fmt_num(e.mean_reward_terms[3]) << ',' << e.crashes << ','
            << fmt_num(e.intervention_rate) << ',' << e.episodes_finished << ',' << fmt_num(e.critic_loss) << ','
            << fmt_num(e.entropy_gear) << ',' << fmt_num(e.entropy_torque) << '\n';
}

/// Writes metrics.json, one trace_<episode>.csv per episode with a trace,
/// safeset.csv and learning_curve.csv into `dir`.
inline void emit_outputs(const RunOutputs& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), ec.message());

    json episodes = json::array();
    for (const auto& e : r.episodes) episodes.push_back(metrics_json(e.metrics));
    const json metrics = {{"config_hash", r.config_hash}, {"seed", r.seed}, {"episodes", episodes}};
    {
        const auto p = dir / "metrics.json";
        auto out = detail::open_output(p);
        out << metrics.dump(2) << '\n';
        detail::close_output(out, p);
    }
    for (const auto& e : r.episodes) {
        if (e.trace.empty()) continue;
        const auto p = dir / ("trace_" + std::to_string(e.metrics.episode_index) + ".csv");
        auto out = detail::open_output(p);
        detail::write_provenance(out, r);
        write_trace_csv(out, e.trace);
        detail::close_output(out, p);
    }
    {
        const auto p = dir / "safeset.csv";
        auto out = detail::open_output(p);
        detail::write_provenance(out, r);
        write_safeset_csv(out, r.safeset);
        detail::close_output(out, p);
    }
    {
        const auto p = dir / "learning_curve.csv";
        auto out = detail::open_output(p);
        detail::write_provenance(out, r);
        write_learning_curve_csv(out, r.learning_curve);
        detail::close_output(out, p);
    }
}

/// Default safe-set grid: 100 x 100 over gap 0..100 m and host speed 0..v_max.
inline std::vector<SafeSetCell> default_safeset(const SafetyConfig& cfg) {
    return safe_set_grid(cfg, AxisSpec{cfg.z0_m, cfg.z0_m + 100.0, 100}, AxisSpec{0.0, cfg.v_host_max_m_s, 100});
}

} // namespace ptcbf
