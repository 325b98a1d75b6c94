#pragma once

#include <array>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ptcbf/harness/config.hpp"
#include "ptcbf/harness/episode.hpp"

namespace ptcbf {

/// Pooled statistics over a set of episodes.
struct ControllerSummary {
    std::string name;
    int episodes = 0;
    long steps = 0;
    double fuel_g = 0.0;
    double distance_m = 0.0;
    double mpg = 0.0;
    double fuel_g_per_km = 0.0;
    double a_rms = 0.0;
    long crash_count = 0;
    double min_gap_m = 0.0;
    std::array<double, 4> mean_reward_terms{};
    double mean_reward = 0.0;
    double intervention_rate = 0.0;
    double mean_approach_rate_m_s = 0.0;
    long infeasible_steps = 0;
};

/// Step-weighted pooling; a_rms is the root of the pooled mean square.
inline ControllerSummary summarize(const std::string& name, const std::vector<EpisodeResult>& results) {
    ControllerSummary s;
    s.name = name;
    s.episodes = static_cast<int>(results.size());
    s.min_gap_m = std::numeric_limits<double>::infinity();
    double sq = 0.0, interventions = 0.0, approach = 0.0;
    for (const auto& r : results) {
        const EpisodeMetrics& m = r.metrics;
        const double n = static_cast<double>(m.steps);
        s.steps += m.steps;
        s.fuel_g += m.fuel_g;
        s.distance_m += m.distance_m;
        s.crash_count += m.crash_count;
        s.infeasible_steps += m.infeasible_steps;
        s.min_gap_m = std::min(s.min_gap_m, m.min_gap_m);
        sq += m.a_rms * m.a_rms * n;
        interventions += m.intervention_rate * n;
        approach += m.mean_approach_rate_m_s * n;
        for (int i = 0; i < 4; ++i) s.mean_reward_terms[i] += m.mean_reward_terms[i] * n;
        s.mean_reward += m.mean_reward * n;
    }
    s.mpg = miles_per_gallon(s.distance_m, s.fuel_g);
    s.fuel_g_per_km = s.distance_m > 0.0 ? s.fuel_g / (s.distance_m / 1000.0) : 0.0;
    if (s.steps > 0) {
        const double n = static_cast<double>(s.steps);
        s.a_rms = std::sqrt(sq / n);
        s.intervention_rate = interventions / n;
        s.mean_approach_rate_m_s = approach / n;
        s.mean_reward /= n;
        for (auto& t : s.mean_reward_terms) t /= n;
    }
    return s;
}

/// Published figures for the comparison; kept for context, not asserted.
struct ReferenceValues {
    double baseline_mpg = 6.875;
    double rl_mpg = 7.4;
    double baseline_a_rms = 0.38;
    double rl_a_rms = 0.2;
};

struct EvaluationReport {
    std::string config_hash;
    std::string cycle_name;
    ControllerSummary baseline;
    ControllerSummary rl;
    ReferenceValues reference;
};

/// Configuration used for held-out evaluation: the evaluation cycle and seed,
/// no injected hard-braking events.
inline ExperimentConfig evaluation_config(const ExperimentConfig& cfg) {
    ExperimentConfig e = cfg;
    e.cycle = cfg.evaluation.cycle;
    e.randomization.seed = cfg.evaluation.seed;
    e.randomization.hard_brake_rate_per_min = 0.0;
    return e;
}

/// Baseline versus the trained policy, both behind the configured filter, on
/// identical episodes.
inline EvaluationReport evaluate(const ExperimentConfig& cfg, const PolicyParams& policy, unsigned threads = 0) {
    const ExperimentConfig e = evaluation_config(cfg);
    const DriveCycle cycle = e.cycle.load();
    EvaluationReport rep;
    rep.config_hash = config_hash(cfg);
    rep.cycle_name = cycle.name;
    BatchOptions opt;
    opt.filter = cfg.filter;
    opt.threads = threads;
    opt.controller = ControllerKind::baseline;
    rep.baseline = summarize("baseline", run_episodes(e, cycle, 0, e.evaluation.episodes, opt));
    opt.controller = ControllerKind::rl;
    opt.policy = &policy;
    opt.stochastic = e.evaluation.sample_policy;
    rep.rl = summarize(std::string("rl-") + to_string(cfg.filter), run_episodes(e, cycle, 0, e.evaluation.episodes, opt));
    return rep;
}

struct FilterComparison {
    ControllerSummary hocbf;
    ControllerSummary ecbf;
};

/// Same policy, same episodes, different safety filters. Initial states are
/// drawn admissible under both filters so the episodes match exactly.
inline FilterComparison compare_filters(const ExperimentConfig& cfg, const PolicyParams& policy, unsigned threads = 0) {
    const ExperimentConfig e = evaluation_config(cfg);
    const DriveCycle cycle = e.cycle.load();
    BatchOptions opt;
    opt.controller = ControllerKind::rl;
    opt.policy = &policy;
    opt.stochastic = e.evaluation.sample_policy;
    opt.threads = threads;
    opt.admission = {FilterKind::hocbf, FilterKind::ecbf};
    FilterComparison c;
    opt.filter = FilterKind::hocbf;
    c.hocbf = summarize("hocbf", run_episodes(e, cycle, 0, e.evaluation.comparison_episodes, opt));
    opt.filter = FilterKind::ecbf;
    c.ecbf = summarize("ecbf", run_episodes(e, cycle, 0, e.evaluation.comparison_episodes, opt));
    return c;
}

inline json summary_json(const ControllerSummary& s) {
    return {{"controller", s.name},
            {"episodes", s.episodes},
            {"steps", s.steps},
            {"mpg", s.mpg},
            {"fuel_g", s.fuel_g},
            {"distance_m", s.distance_m},
            {"fuel_g_per_km", s.fuel_g_per_km},
            {"a_rms", s.a_rms},
            {"crash_count", s.crash_count},
            {"min_gap_m", s.min_gap_m},
            {"mean_reward", s.mean_reward},
            {"mean_reward_terms", s.mean_reward_terms},
            {"intervention_rate", s.intervention_rate},
            {"mean_approach_rate_m_s", s.mean_approach_rate_m_s},
            {"infeasible_steps", s.infeasible_steps}};
}

inline json report_json(const EvaluationReport& r) {
    return {{"config_hash", r.config_hash},
            {"cycle", r.cycle_name},
            {"controllers", json::array({summary_json(r.baseline), summary_json(r.rl)})},
            {"reference",
             {{"baseline_mpg", r.reference.baseline_mpg},
              {"rl_mpg", r.reference.rl_mpg},
              {"baseline_a_rms", r.reference.baseline_a_rms},
              {"rl_a_rms", r.reference.rl_a_rms}}}};
}

} // namespace ptcbf
