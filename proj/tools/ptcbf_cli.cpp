#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ptcbf/ptcbf.hpp"

namespace {

using namespace ptcbf;

constexpr int kExitChecksFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitRuntime = 4;

struct CheckReport {
    std::vector<std::string> failures;

    void require(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    int exit_code() const {
        for (const auto& f : failures) std::cerr << "check failed: " << f << '\n';
        return failures.empty() ? 0 : kExitChecksFailed;
    }
};

void check_episodes(const ExperimentConfig& cfg, const std::vector<EpisodeResult>& results, CheckReport& checks) {
    for (const auto& r : results) {
        const auto& m = r.metrics;
        const std::string tag = "episode " + std::to_string(m.episode_index);
        if (cfg.checks.no_crash) checks.require(m.crash_count == 0, tag + ": " + std::to_string(m.crash_count) + " crash steps");
        if (cfg.checks.fuel_conservation && !r.trace.empty()) {
            double integral = 0.0;
            for (const auto& s : r.trace) integral += s.fuel_rate_g_s * cfg.dt_s;
            const double tol = 1e-9 * std::max(1.0, std::abs(m.fuel_g));
            checks.require(std::abs(integral - m.fuel_g) <= tol, tag + ": fuel integral does not match fuel_g");
        }
    }
}

PolicyParams random_policy(const ExperimentConfig& cfg) {
    std::mt19937_64 rng(cfg.training.seed);
    return PolicyParams::create(cfg.training.policy, rng);
}

void print_summary(const ControllerSummary& s) {
    std::printf("%-14s episodes=%d steps=%ld mpg=%.3f fuel_g_per_km=%.2f a_rms=%.4f crashes=%ld min_gap=%.3f "
                "intervention=%.4f accommodation=%.4f\n",
                s.name.c_str(), s.episodes, s.steps, s.mpg, s.fuel_g_per_km, s.a_rms, s.crash_count, s.min_gap_m,
                s.intervention_rate, s.mean_reward_terms[0]);
}

struct Common {
    std::string config_path;
    std::string output_dir;
    unsigned threads = 0;

    ExperimentConfig load() const {
        ExperimentConfig cfg = load_config(config_path);
        if (!output_dir.empty()) cfg.output_dir = output_dir;
        return cfg;
    }
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--output", c.output_dir, "Output directory (overrides the config)");
    app->add_option("--threads", c.threads, "Worker threads (0: all cores)");
}

int cmd_simulate(const Common& c, std::optional<int> episodes, const std::string& filter,
                 const std::string& controller, const std::string& checkpoint) {
    ExperimentConfig cfg = c.load();
    if (episodes) cfg.episodes = *episodes;
    if (!filter.empty()) cfg.filter = parse_filter_kind(filter);
    if (!controller.empty()) cfg.controller = parse_controller_kind(controller);
    cfg.validate();

    std::optional<PolicyParams> policy;
    if (cfg.controller == ControllerKind::rl)
        policy = checkpoint.empty() ? random_policy(cfg) : load_checkpoint(checkpoint).policy;

    BatchOptions opt;
    opt.controller = cfg.controller;
    opt.filter = cfg.filter;
    opt.policy = policy ? &*policy : nullptr;
    opt.stochastic = cfg.evaluation.sample_policy;
    opt.record_trace = true;
    opt.threads = c.threads;
    const DriveCycle cycle = cfg.cycle.load();

    RunOutputs out;
    out.config_hash = config_hash(cfg);
    out.seed = cfg.randomization.seed;
    out.episodes = run_episodes(cfg, cycle, 0, cfg.episodes, opt);
    out.safeset = default_safeset(cfg.safety);
    emit_outputs(out, cfg.output_dir);

    print_summary(summarize(std::string(to_string(cfg.controller)) + "-" + to_string(cfg.filter), out.episodes));
    CheckReport checks;
    check_episodes(cfg, out.episodes, checks);
    return checks.exit_code();
}

int cmd_train(const Common& c) {
    ExperimentConfig cfg = c.load();
    cfg.controller = ControllerKind::rl;
    cfg.validate();
    const TrainResult res = train(cfg, [](const EpochStats& e) {
        std::printf("epoch %d steps=%ld reward=%.4f smoothed=%.4f accommodation=%.4f crashes=%ld intervention=%.4f\n",
                    e.epoch, e.steps, e.mean_reward, e.smoothed_reward, e.mean_reward_terms[0], e.crashes,
                    e.intervention_rate);
        std::fflush(stdout);
    });

    RunOutputs out;
    out.config_hash = config_hash(cfg);
    out.seed = cfg.training.seed;
    out.learning_curve = res.curve;
    out.safeset = default_safeset(cfg.safety);
    emit_outputs(out, cfg.output_dir);
    const auto ck_path = std::filesystem::path(cfg.output_dir) / "checkpoint.json";
    save_checkpoint(res.checkpoint, ck_path.string());
    std::printf("checkpoint: %s\n", ck_path.string().c_str());

    CheckReport checks;
    checks.require(!res.aborted, "training aborted: " + res.abort_reason);
    if (cfg.checks.no_crash) checks.require(res.total_crashes == 0, std::to_string(res.total_crashes) + " crash steps during training");
    return checks.exit_code();
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, bool compare) {
    ExperimentConfig cfg = c.load();
    cfg.validate();
    const Checkpoint ck = load_checkpoint(checkpoint);
    if (ck.config_hash != config_hash(cfg))
        std::cerr << "note: checkpoint was trained under config " << ck.config_hash << '\n';

    const EvaluationReport rep = evaluate(cfg, ck.policy, c.threads);
    json report = report_json(rep);
    print_summary(rep.baseline);
    print_summary(rep.rl);
    CheckReport checks;
    if (cfg.checks.no_crash) {
        checks.require(rep.baseline.crash_count == 0, "baseline crashed");
        checks.require(rep.rl.crash_count == 0, "rl crashed");
    }
    if (compare) {
        const FilterComparison fc = compare_filters(cfg, ck.policy, c.threads);
        report["filter_comparison"] = json::array({summary_json(fc.hocbf), summary_json(fc.ecbf)});
        print_summary(fc.hocbf);
        print_summary(fc.ecbf);
        if (cfg.checks.no_crash) {
            checks.require(fc.hocbf.crash_count == 0, "rl-hocbf crashed in the filter comparison");
            checks.require(fc.ecbf.crash_count == 0, "rl-ecbf crashed in the filter comparison");
        }
    }

    std::filesystem::create_directories(cfg.output_dir);
    const auto path = std::filesystem::path(cfg.output_dir) / "evaluation.json";
    std::ofstream f(path);
    f << report.dump(2) << '\n';
    if (!f) throw IoError(path.string(), "write failed");
    return checks.exit_code();
}

int cmd_safeset(const Common& c) {
    ExperimentConfig cfg = c.load();
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);
    const auto path = std::filesystem::path(cfg.output_dir) / "safeset.csv";
    std::ofstream f(path);
    RunOutputs r;
    r.config_hash = config_hash(cfg);
    r.seed = cfg.randomization.seed;
    detail::write_provenance(f, r);
    write_safeset_csv(f, default_safeset(cfg.safety));
    if (!f) throw IoError(path.string(), "write failed");
    std::printf("%s\n", path.string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Powertrain control with a barrier-function safety filter"};
    app.require_subcommand(1);

    Common sim_c, train_c, eval_c, safe_c;
    std::optional<int> episodes;
    std::string filter, controller, sim_checkpoint, eval_checkpoint;
    bool compare = false;

    auto* sim = app.add_subcommand("simulate", "Run episodes and write metrics, traces and the safe-set grid");
    add_common(sim, sim_c);
    sim->add_option("--episodes", episodes, "Number of episodes");
    sim->add_option("--filter", filter, "hocbf | ecbf | none")->check(CLI::IsMember({"hocbf", "ecbf", "none"}));
    sim->add_option("--controller", controller, "rl | baseline | adversarial")
        ->check(CLI::IsMember({"rl", "baseline", "adversarial"}));
    sim->add_option("--checkpoint", sim_checkpoint, "Policy checkpoint for the rl controller (default: untrained)");

    auto* tr = app.add_subcommand("train", "Train the policy behind the configured filter");
    add_common(tr, train_c);

    auto* ev = app.add_subcommand("evaluate", "Compare baseline and trained policy on the evaluation cycle");
    add_common(ev, eval_c);
    ev->add_option("--checkpoint", eval_checkpoint, "Policy checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_flag("--compare-filters", compare, "Also run the policy behind hocbf and ecbf on matched episodes");

    auto* ss = app.add_subcommand("safeset", "Write the safe-set grid");
    add_common(ss, safe_c);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(sim_c, episodes, filter, controller, sim_checkpoint);
        if (tr->parsed()) return cmd_train(train_c);
        if (ev->parsed()) return cmd_evaluate(eval_c, eval_checkpoint, compare);
        if (ss->parsed()) return cmd_safeset(safe_c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}
