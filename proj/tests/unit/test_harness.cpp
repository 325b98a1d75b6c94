#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <gtest/gtest.h>

#include "ptcbf/ptcbf.hpp"

using namespace ptcbf;

namespace {

ExperimentConfig short_config() {
    ExperimentConfig c;
    c.cycle.duration_s = 200.0;
    c.episode_length_s = 60.0;
    c.training.policy.hidden = {16, 16};
    return c;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ptcbf_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Every scalar leaf of a JSON document, addressed by pointer.
void leaves(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) leaves(it.value(), prefix + "/" + it.key(), out);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) leaves(j[i], prefix + "/" + std::to_string(i), out);
    } else {
        out.push_back(prefix);
    }
}

json perturbed(const json& v) {
    if (v.is_boolean()) return !v.get<bool>();
    if (v.is_number_integer()) return v.get<long>() + 1;
    if (v.is_number_unsigned()) return v.get<std::uint64_t>() + 1;
    if (v.is_number_float()) return v.get<double>() * 1.5 + 0.25;
    return v.get<std::string>() + "x";
}

} // namespace

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = short_config();
    c.filter = FilterKind::ecbf;
    c.controller = ControllerKind::adversarial;
    c.safety.lead_accel_mode = LeadAccelMode::worst_case;
    c.safety.region2_form = Region2Form::gap_envelope;
    c.randomization.start_offset_s = {1.0, 5.0};
    c.training.trainer.gae_lambda = 0.9;
    const json j = to_json(c);
    const ExperimentConfig back = config_from_json(j);
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(back.filter, FilterKind::ecbf);
    EXPECT_EQ(back.safety.region2_form, Region2Form::gap_envelope);
}

TEST(Config, PartialDocumentKeepsDefaults) {
    const ExperimentConfig c = config_from_json(json::parse(R"({"episodes": 4, "safety": {"z0_m": 3.0}})"));
    EXPECT_EQ(c.episodes, 4);
    EXPECT_EQ(c.safety.z0_m, 3.0);
    EXPECT_EQ(c.safety.a_host_max_m_s2, 2.27);
    EXPECT_EQ(c.training.trainer.gamma, 0.95);
    EXPECT_EQ(c.training.trainer.actor_lr, 1e-4);
    EXPECT_EQ(c.training.trainer.critic_lr, 1e-5);
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(config_from_json(json::parse(R"({"episode": 4})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"safety": {"z_0": 2.0}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"training": {"trainer": {"lr": 1.0}}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"filter": "cbf"})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"dt_s": "fast"})")), ConfigError);
}

TEST(Config, ValidationRejectsBadValues) {
    EXPECT_THROW(config_from_json(json::parse(R"({"dt_s": 0.0})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"training": {"trainer": {"gamma": 1.0}}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"randomization": {"mass_range_kg": [9000, 8000]}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"vehicle": {"gear_ratios": [3, 4]}})")), ConfigError);
}

TEST(Config, HashChangesIffAFieldChanges) {
    const ExperimentConfig c = short_config();
    const json base = to_json(c);
    const std::string h = config_hash(c);
    EXPECT_EQ(config_hash(short_config()), h);
    std::vector<std::string> paths;
    leaves(base, "", paths);
    ASSERT_GT(paths.size(), 80u);
    int checked = 0;
    for (const auto& path : paths) {
        const json::json_pointer ptr(path);
        json j = base;
        j[ptr] = perturbed(j[ptr]);
        ExperimentConfig changed;
        try {
            changed = config_from_json(j);
        } catch (const Error&) {
            continue;
        }
        EXPECT_NE(config_hash(changed), h) << path;
        ++checked;
    }
    EXPECT_GT(checked, 60);
}

TEST(Config, ShippedConfigsLoad) {
    for (const auto& e : std::filesystem::directory_iterator(PTCBF_CONFIG_DIR)) {
        if (e.path().extension() != ".json") continue;
        EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
    }
    EXPECT_EQ(to_json(load_config(std::string(PTCBF_CONFIG_DIR) + "/default.json")), to_json(ExperimentConfig{}));
    EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(Metrics, MilesPerGallon) {
    const double gallon_g = 1000.0 * kDieselDensityKgPerL * kLitersPerUsGallon;
    EXPECT_NEAR(miles_per_gallon(kMetersPerMile, gallon_g), 1.0, 1e-12);
    EXPECT_NEAR(miles_per_gallon(7.0 * kMetersPerMile, gallon_g), 7.0, 1e-12);
    EXPECT_EQ(miles_per_gallon(100.0, 0.0), 0.0);
}

TEST(Metrics, JsonRoundTrip) {
    EpisodeMetrics m;
    m.episode_index = 12;
    m.seed = 99;
    m.steps = 601;
    m.crash_count = 1;
    m.min_gap_m = 1.98765432123;
    m.fuel_g = 1234.5678;
    m.distance_m = 4321.0;
    m.mpg = 6.875;
    m.a_rms = 0.123456789;
    m.mean_reward_terms = {0.6, 0.2, 0.07, 0.074};
    m.mean_reward = 0.944;
    m.intervention_rate = 0.1 / 3.0;
    m.infeasible_steps = 2;
    m.mean_approach_rate_m_s = 0.7;
    EXPECT_EQ(metrics_from_json(json::parse(metrics_json(m).dump())), m);
    EpisodeMetrics empty;
    EXPECT_EQ(metrics_from_json(json::parse(metrics_json(empty).dump())), empty);
}

TEST(Outputs, EmptyRunWritesHeaders) {
    const auto dir = temp_dir("empty");
    RunOutputs r;
    r.config_hash = "abc";
    r.seed = 3;
    emit_outputs(r, dir);
    const MetricsFile f = load_metrics((dir / "metrics.json").string());
    EXPECT_EQ(f.config_hash, "abc");
    EXPECT_EQ(f.seed, 3u);
    EXPECT_TRUE(f.episodes.empty());
    EXPECT_NE(slurp(dir / "safeset.csv").find("z_m,v_h_m_s,region"), std::string::npos);
    EXPECT_NE(slurp(dir / "learning_curve.csv").find("epoch,steps"), std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST(Outputs, EpisodeFilesAndProvenance) {
    const ExperimentConfig cfg = short_config();
    const auto dir = temp_dir("episodes");
    RunOutputs r;
    r.config_hash = config_hash(cfg);
    r.seed = cfg.randomization.seed;
    r.episodes.push_back(run_episode(cfg, 0));
    r.safeset = default_safeset(cfg.safety);
    emit_outputs(r, dir);
    const MetricsFile f = load_metrics((dir / "metrics.json").string());
    ASSERT_EQ(f.episodes.size(), 1u);
    EXPECT_EQ(f.episodes[0], r.episodes[0].metrics);
    const std::string trace = slurp(dir / "trace_0.csv");
    EXPECT_EQ(trace.rfind("# config_hash=" + r.config_hash, 0), 0u);
    const auto lines = std::count(trace.begin(), trace.end(), '\n');
    EXPECT_EQ(lines, 2 + r.episodes[0].metrics.steps);
    const std::string safeset = slurp(dir / "safeset.csv");
    EXPECT_EQ(std::count(safeset.begin(), safeset.end(), '\n'), 2 + 100 * 100);
    EXPECT_THROW(load_metrics((dir / "missing.json").string()), IoError);
    std::filesystem::remove_all(dir);
}

TEST(Episode, Deterministic) {
    ExperimentConfig cfg = short_config();
    cfg.randomization.hard_brake_rate_per_min = 3.0;
    const EpisodeResult a = run_episode(cfg, 5), b = run_episode(cfg, 5);
    EXPECT_EQ(a.metrics.steps, 600);
    EXPECT_EQ(a.metrics, b.metrics);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        EXPECT_EQ(a.trace[i].applied_torque_nm, b.trace[i].applied_torque_nm);
        EXPECT_EQ(a.trace[i].separation_m, b.trace[i].separation_m);
    }
}

TEST(Episode, FuelIntegralMatchesTotal) {
    for (ControllerKind k : {ControllerKind::baseline, ControllerKind::adversarial}) {
        ExperimentConfig cfg = short_config();
        cfg.controller = k;
        const EpisodeResult r = run_episode(cfg, 2);
        double integral = 0.0;
        for (const auto& s : r.trace) integral += s.fuel_rate_g_s * cfg.dt_s;
        EXPECT_NEAR(integral, r.metrics.fuel_g, 1e-9 * std::max(1.0, r.metrics.fuel_g));
        EXPECT_EQ(static_cast<long>(r.trace.size()), r.metrics.steps);
        EXPECT_GT(r.metrics.fuel_g, 0.0);
    }
}

TEST(Episode, ThreadCountDoesNotChangeResults) {
    ExperimentConfig cfg = short_config();
    cfg.controller = ControllerKind::rl;
    std::mt19937_64 rng(1);
    const PolicyParams policy = PolicyParams::create(cfg.training.policy, rng);
    const DriveCycle cycle = cfg.cycle.load();
    BatchOptions opt;
    opt.controller = ControllerKind::rl;
    opt.policy = &policy;
    opt.stochastic = true;
    opt.threads = 1;
    const auto one = run_episodes(cfg, cycle, 10, 6, opt);
    opt.threads = 4;
    const auto four = run_episodes(cfg, cycle, 10, 6, opt);
    ASSERT_EQ(one.size(), four.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
        EXPECT_EQ(one[i].metrics, four[i].metrics);
        EXPECT_EQ(one[i].metrics.episode_index, 10 + i);
    }
    EXPECT_TRUE(run_episodes(cfg, cycle, 0, 0, opt).empty());
}

TEST(Episode, ExactFeedforwardTracksConstantLead) {
    ExperimentConfig cfg;
    cfg.baseline_model = BaselineModel::exact;
    cfg.randomization.speed_noise_std_m_s = 0.0;
    cfg.randomization.grade_range_rad = {0.0, 0.0};
    cfg.randomization.initial_gap_range_m = {40.0, 40.0};
    cfg.episode_length_s = 120.0;
    DriveCycle cycle;
    cycle.name = "constant";
    cycle.samples = {{0.0, 15.0}, {200.0, 15.0}};
    Environment env(cfg, cycle, FilterKind::hocbf);
    BaselineController ctrl(BaselineModel::exact);
    const EpisodeResult r = run_episode(env, ctrl, 0);
    EXPECT_EQ(r.metrics.crash_count, 0);
    EXPECT_LT(r.metrics.a_rms, 0.05);
    const StepRecord& last = r.trace.back();
    EXPECT_NEAR(last.host_speed_m_s, 15.0, 0.1);
    EXPECT_NEAR(last.desired_accel_m_s2, 0.0, 0.02);
}

TEST(Episode, AdversarialControllerNeverCrashes) {
    ExperimentConfig cfg = short_config();
    cfg.controller = ControllerKind::adversarial;
    cfg.randomization.hard_brake_rate_per_min = 4.0;
    const DriveCycle cycle = cfg.cycle.load();
    for (FilterKind f : {FilterKind::hocbf, FilterKind::ecbf}) {
        BatchOptions opt;
        opt.controller = ControllerKind::adversarial;
        opt.filter = f;
        opt.threads = 2;
        for (const auto& r : run_episodes(cfg, cycle, 0, 10, opt)) {
            EXPECT_EQ(r.metrics.crash_count, 0) << to_string(f);
            EXPECT_GE(r.metrics.min_gap_m, cfg.safety.z0_m - kCrashTolerance_m);
        }
    }
}

TEST(Episode, UnfilteredAdversaryCrashes) {
    ExperimentConfig cfg = short_config();
    cfg.randomization.hard_brake_rate_per_min = 4.0;
    const DriveCycle cycle = cfg.cycle.load();
    BatchOptions opt;
    opt.controller = ControllerKind::adversarial;
    opt.filter = FilterKind::none;
    long crashes = 0;
    for (const auto& r : run_episodes(cfg, cycle, 0, 5, opt)) crashes += r.metrics.crash_count;
    EXPECT_GT(crashes, 0);
}

TEST(Summary, PoolsByStep) {
    EpisodeResult a, b;
    a.metrics.steps = 10;
    a.metrics.a_rms = 1.0;
    a.metrics.fuel_g = 100.0;
    a.metrics.distance_m = 1000.0;
    a.metrics.min_gap_m = 5.0;
    a.metrics.intervention_rate = 0.5;
    b.metrics.steps = 30;
    b.metrics.a_rms = 0.0;
    b.metrics.fuel_g = 300.0;
    b.metrics.distance_m = 1000.0;
    b.metrics.min_gap_m = 3.0;
    const ControllerSummary s = summarize("x", {a, b});
    EXPECT_EQ(s.steps, 40);
    EXPECT_NEAR(s.a_rms, std::sqrt(10.0 / 40.0), 1e-15);
    EXPECT_NEAR(s.fuel_g_per_km, 200.0, 1e-12);
    EXPECT_NEAR(s.intervention_rate, 5.0 / 40.0, 1e-15);
    EXPECT_EQ(s.min_gap_m, 3.0);
}

TEST(Training, ShortRunIsReproducible) {
    ExperimentConfig cfg = short_config();
    cfg.controller = ControllerKind::rl;
    cfg.training.total_steps = 3000;
    cfg.training.steps_per_epoch = 1000;
    cfg.training.num_envs = 2;
    const TrainResult a = train(cfg), b = train(cfg);
    EXPECT_FALSE(a.aborted);
    ASSERT_EQ(a.curve.size(), 3u);
    EXPECT_EQ(a.checkpoint.steps, 3000);
    EXPECT_EQ(a.total_crashes, 0);
    EXPECT_EQ(a.checkpoint.policy.actor.params(), b.checkpoint.policy.actor.params());
    EXPECT_EQ(a.curve.back().mean_reward, b.curve.back().mean_reward);
    EXPECT_NEAR(a.curve.back().smoothed_reward, smoothed_reward(a.curve), 1e-15);
    ExperimentConfig baseline = cfg;
    baseline.controller = ControllerKind::baseline;
    EXPECT_THROW(train(baseline), ConfigError);
}

TEST(Training, SmoothedRewardWindow) {
    std::vector<EpochStats> c(5);
    for (int i = 0; i < 5; ++i) c[static_cast<std::size_t>(i)].mean_reward = i;
    EXPECT_DOUBLE_EQ(smoothed_reward(c, 3), 3.0);
    EXPECT_DOUBLE_EQ(smoothed_reward(c, 10), 2.0);
    EXPECT_EQ(smoothed_reward({}, 3), 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    ExperimentConfig cfg = short_config();
    cfg.controller = ControllerKind::rl;
    cfg.training.total_steps = 500;
    cfg.training.num_envs = 2;
    const TrainResult t = train(cfg);
    const auto dir = temp_dir("ckpt");
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "ck.json").string();
    save_checkpoint(t.checkpoint, path);
    Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(back.policy.actor.params(), t.checkpoint.policy.actor.params());
    EXPECT_EQ(back.policy.critic.params(), t.checkpoint.policy.critic.params());
    EXPECT_EQ(back.actor_opt.second_moment(), t.checkpoint.actor_opt.second_moment());
    EXPECT_EQ(back.config_hash, config_hash(cfg));
    EXPECT_EQ(back.steps, 500);
    std::mt19937_64 expected_rng = t.checkpoint.rng, restored_rng = back.rng;
    EXPECT_EQ(restored_rng(), expected_rng());
    EXPECT_EQ(checkpoint_to_json(back).dump(), checkpoint_to_json(load_checkpoint(path)).dump());
    std::ofstream(dir / "bad.json") << R"({"format": "other"})";
    EXPECT_THROW(load_checkpoint((dir / "bad.json").string()), ConfigError);
    std::filesystem::remove_all(dir);
}
