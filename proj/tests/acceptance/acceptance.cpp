#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptcbf/ptcbf.hpp"

using namespace ptcbf;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

SimState state_at(double gap, double vh, double vl, const SafetyConfig& cfg, int gear) {
    SimState s;
    s.separation_m = cfg.z0_m + gap;
    s.host_speed_m_s = vh;
    s.lead_speed_m_s = vl;
    s.gear_index = gear;
    return s;
}

/// v2 of the sampled barrier recomputed from the plant step.
double sampled_v2(const SimState& s, double torque, double a_l, const VehicleParams& p, const SafetyConfig& cfg,
                  FilterKind kind, double dt) {
    auto v1 = [&](const SimState& x) {
        const double gap = x.separation_m - cfg.z0_m;
        const double shifted = gap + 0.5 * (x.lead_speed_m_s - x.host_speed_m_s) * dt;
        const double a1 = kind == FilterKind::ecbf ? ecbf_poles(cfg).first * shifted
                                                   : TwoRegionAlpha1{cfg}(shifted, x.host_speed_m_s, x.lead_speed_m_s).value;
        return x.lead_speed_m_s - x.host_speed_m_s + a1;
    };
    const double gain = kind == FilterKind::ecbf ? ecbf_poles(cfg).second : cfg.alpha2_gain;
    const SimState next = step(s, torque, a_l, dt, p);
    return (v1(next) - v1(s)) / dt + gain * v1(s);
}

/// argmin |T - proposed| subject to v2(T) >= 0 on [lo, hi] by golden-section
/// search on an exact L1 penalty; full braking when no torque is admissible.
double numeric_projection(double proposed, double lo, double hi, double penalty,
                          const std::function<double(double)>& v2) {
    if (v2(lo) < 0.0) return lo;
    auto f = [&](double t) { return std::abs(t - proposed) + penalty * std::max(0.0, -v2(t)); };
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < 200 && b - a > 1e-10; ++i) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    const double t = 0.5 * (a + b);
    for (double cand : {lo, hi, std::clamp(proposed, lo, hi)})
        if (f(cand) < f(t)) return cand;
    return t;
}

Outcome safety_invariance(unsigned threads) {
    ExperimentConfig cfg = load_config(std::string(PTCBF_CONFIG_DIR) + "/safety_stress.json");
    const DriveCycle cycle = cfg.cycle.load();
    std::mt19937_64 rng(cfg.training.seed);
    const PolicyParams untrained = PolicyParams::create(cfg.training.policy, rng);
    long crashes = 0, steps = 0;
    double min_gap = std::numeric_limits<double>::infinity();
    std::string parts;
    for (FilterKind f : {FilterKind::hocbf, FilterKind::ecbf}) {
        for (ControllerKind c : {ControllerKind::rl, ControllerKind::adversarial}) {
            BatchOptions opt;
            opt.filter = f;
            opt.controller = c;
            opt.policy = &untrained;
            opt.stochastic = true;
            opt.threads = threads;
            const ControllerSummary s = summarize("", run_episodes(cfg, cycle, 0, 100, opt));
            crashes += s.crash_count;
            steps += s.steps;
            min_gap = std::min(min_gap, s.min_gap_m);
            parts += fmt(" %s/%s=%ld", to_string(f), to_string(c), s.crash_count);
        }
    }
    return {crashes == 0, fmt("crash steps %ld of %ld (min gap %.4f m, z0 %.1f m);", crashes, steps, min_gap,
                              cfg.safety.z0_m) + parts};
}

Outcome projection_equivalence() {
    SafetyConfig cfg;
    VehicleParams p;
    const double dt = 0.1;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> gap(0.0, 80.0), speed(0.0, 30.0), accel(-2.0, 2.0), torque(-20000.0, 60000.0);
    std::uniform_int_distribution<int> gear(0, 9);
    std::uniform_int_distribution<int> which(0, 1);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const FilterKind kind = which(rng) ? FilterKind::hocbf : FilterKind::ecbf;
        const SimState s = state_at(gap(rng), speed(rng), speed(rng), cfg, gear(rng));
        const double a_l = accel(rng), proposed = torque(rng);
        const double lo = -p.max_brake_torque_nm, hi = max_traction_torque(s.host_speed_m_s, p, s.gear_index);
        const FilterResult r = filter_action(proposed, s, a_l, p, cfg, kind, dt);
        const double oracle = numeric_projection(proposed, lo, hi, 1e3 * p.mass_kg * p.wheel_radius_m,
                                                 [&](double t) { return sampled_v2(s, t, a_l, p, cfg, kind, dt); });
        worst = std::max(worst, std::abs(r.safe_torque_nm - oracle));
    }
    return {worst <= 1e-6, fmt("max |T_filter - T_qp| = %.3g N m over 1000 states", worst)};
}

Outcome safe_set_geometry() {
    SafetyConfig cfg;
    const double dt = 0.005;
    const auto cells = safe_set_grid(cfg, AxisSpec{cfg.z0_m, cfg.z0_m + 100.0, 100}, AxisSpec{0.0, 40.0, 100});
    int agree = 0;
    for (const auto& c : cells) {
        const double need = c.min_lead_speed_m_s;
        bool ok = (c.region == Region::region1) == brute_force_safe(c.z_m, c.v_h_m_s, 0.0, cfg, dt);
        ok = ok && brute_force_safe(c.z_m, c.v_h_m_s, need + 0.01, cfg, dt);
        if (need > 0.05) ok = ok && !brute_force_safe(c.z_m, c.v_h_m_s, need - 0.05, cfg, dt);
        agree += ok ? 1 : 0;
    }
    const double frac = static_cast<double>(agree) / static_cast<double>(cells.size());
    return {frac >= 0.99, fmt("agreement %.2f%% (%d of %zu cells)", 100.0 * frac, agree, cells.size())};
}

Outcome paper_constants() {
    SafetyConfig cfg;
    const double two_ah = 2.0 * cfg.a_host_max_m_s2;
    const double rho = cfg.a_lead_max_m_s2 / cfg.a_host_max_m_s2;
    const double c = region2_stationary_coefficient(cfg);
    const bool ok = std::abs(two_ah - 4.54) <= 0.01 * 4.54 && std::abs(rho - 0.88) <= 0.01 * 0.88 &&
                    std::abs(c - 38.2) <= 0.01 * 38.2 && std::abs(c - 33.6) > 0.01 * 33.6;
    return {ok, fmt("2 a_h = %.4f, a_l/a_h = %.4f, stationary coefficient = %.3f (33.6 not reproduced)", two_ah, rho, c)};
}

Outcome conservatism(const ExperimentConfig& cfg, const PolicyParams& policy, unsigned threads) {
    const FilterComparison c = compare_filters(cfg, policy, threads);
    const double acc_h = c.hocbf.mean_reward_terms[0], acc_e = c.ecbf.mean_reward_terms[0];
    const bool ok = acc_h >= acc_e && c.hocbf.mean_approach_rate_m_s >= c.ecbf.mean_approach_rate_m_s &&
                    c.hocbf.intervention_rate <= c.ecbf.intervention_rate;
    return {ok, fmt("accommodation %.5f vs %.5f, approach rate %.4f vs %.4f m/s, intervention %.4f vs %.4f "
                    "(hocbf vs ecbf, %d episodes)",
                    acc_h, acc_e, c.hocbf.mean_approach_rate_m_s, c.ecbf.mean_approach_rate_m_s,
                    c.hocbf.intervention_rate, c.ecbf.intervention_rate, c.hocbf.episodes)};
}

Outcome training_viability(const TrainResult& r, double seconds) {
    if (r.curve.empty() || r.aborted) return {false, "training aborted: " + r.abort_reason};
    const double first = r.curve.front().mean_reward;
    const double last = smoothed_reward(r.curve);
    const double ratio = last / first;
    return {ratio >= 1.2 && r.total_crashes == 0,
            fmt("first epoch %.4f, smoothed final %.4f, ratio %.3f, crashes %ld, %ld steps in %.0f s", first, last,
                ratio, r.total_crashes, r.curve.back().steps, seconds)};
}

Outcome table2_direction(const ExperimentConfig& cfg, const PolicyParams& policy, unsigned threads) {
    const EvaluationReport rep = evaluate(cfg, policy, threads);
    const bool ok = rep.rl.a_rms < rep.baseline.a_rms && rep.rl.fuel_g_per_km <= rep.baseline.fuel_g_per_km;
    return {ok, fmt("a_rms rl %.4f vs baseline %.4f; fuel rl %.2f vs baseline %.2f g/km (mpg %.3f vs %.3f)",
                    rep.rl.a_rms, rep.baseline.a_rms, rep.rl.fuel_g_per_km, rep.baseline.fuel_g_per_km, rep.rl.mpg,
                    rep.baseline.mpg)};
}

Outcome reward_arithmetic() {
    const RewardWeights w;
    const double ideal = reward(RewardInput{}, w);
    bool ok = std::abs(ideal - 1.075) <= 1e-12;
    const RewardTerms base = reward_terms(RewardInput{}, w);
    RewardInput a;
    a.desired_accel_m_s2 = w.a_des_max;
    RewardInput f;
    f.fuel_rate_g_s = w.fuel_rate_max;
    RewardInput t;
    t.torque_delta_nm = w.torque_delta_max;
    RewardInput g;
    g.gear_delta_realized = 1;
    const double ra = reward_terms(a, w).accommodation / base.accommodation;
    const double rf = reward_terms(f, w).fuel / base.fuel;
    const double rt = reward_terms(t, w).torque / base.torque;
    const double rg = reward_terms(g, w).gear / base.gear;
    for (double r : {ra, rf, rt, rg}) ok = ok && std::abs(r - 0.1) <= 1e-12;
    return {ok, fmt("ideal reward %.15f; decade ratios %.12f %.12f %.12f %.12f", ideal, ra, rf, rt, rg)};
}

double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& n) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a(i) - n(i)) / std::max({std::abs(a(i)), std::abs(n(i)), 1e-6}));
    return worst;
}

Eigen::VectorXd central_difference(Eigen::VectorXd& params, const std::function<double()>& f) {
    const double h = 1e-6;
    Eigen::VectorXd g(params.size());
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double x = params(i);
        params(i) = x + h;
        const double up = f();
        params(i) = x - h;
        const double down = f();
        params(i) = x;
        g(i) = (up - down) / (2.0 * h);
    }
    return g;
}

Outcome gradient_check() {
    PolicyConfig pc;
    pc.hidden = {4};
    std::mt19937_64 rng(99);
    PolicyParams p = PolicyParams::create(pc, rng);
    std::normal_distribution<double> n(0.0, 0.5);
    for (Eigen::Index i = 0; i < p.actor.param_count(); ++i) p.actor.params()(i) = n(rng);
    for (Eigen::Index i = 0; i < p.critic.param_count(); ++i) p.critic.params()(i) = n(rng);

    std::normal_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> gear(0, 2);
    Batch batch;
    for (int r = 0; r < 3; ++r) {
        Rollout ro;
        for (int t = 0; t < 4; ++t) {
            PolicyState s;
            for (int i = 0; i < kFeatureCount; ++i) s(i) = u(rng);
            ro.states.push_back(s);
            ro.gear_choices.push_back(gear(rng));
            ro.pre_squash.push_back(u(rng));
            ro.rewards.push_back(u(rng));
        }
        batch.push_back(ro);
    }
    const FlatBatch flat = flatten(batch);
    Eigen::VectorXd adv(flat.states.cols());
    for (Eigen::Index i = 0; i < adv.size(); ++i) adv(i) = u(rng);
    const ActorLossCoefs coefs{0.05, 0.01};
    Eigen::VectorXd ga;
    actor_loss(p, flat, adv, coefs, &ga);
    const double ea = max_rel_error(
        ga, central_difference(p.actor.params(), [&] { return actor_loss(p, flat, adv, coefs, nullptr).loss; }));

    const Eigen::VectorXd targets = Eigen::VectorXd::LinSpaced(flat.states.cols(), -2.0, 3.0);
    Eigen::VectorXd gc;
    critic_loss(p.critic, flat.states, targets, &gc);
    const double ec = max_rel_error(
        gc, central_difference(p.critic.params(), [&] { return critic_loss(p.critic, flat.states, targets, nullptr); }));
    return {std::max(ea, ec) < 1e-4, fmt("max relative error actor %.3g (%ld params), critic %.3g (%ld params)", ea,
                                         static_cast<long>(p.actor.param_count()), ec,
                                         static_cast<long>(p.critic.param_count()))};
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / "ptcbf_acceptance_determinism";
    std::string files[2];
    for (int run = 0; run < 2; ++run) {
        std::filesystem::remove_all(dir);
        const std::string cmd = std::string("\"") + PTCBF_CLI_PATH + "\" simulate --config \"" + PTCBF_CONFIG_DIR +
                                "/quick.json\" --controller rl --output \"" + dir.string() + "\" --threads " +
                                std::to_string(run == 0 ? 1 : 4) + " > /dev/null";
        const int rc = std::system(cmd.c_str());
        if (rc != 0) return {false, fmt("simulate run %d exited with status %d", run, rc)};
        files[run] = read_file(dir / "metrics.json");
    }
    std::filesystem::remove_all(dir);
    const bool ok = !files[0].empty() && files[0] == files[1];
    return {ok, fmt("metrics.json %zu and %zu bytes, %s (1 vs 4 threads)", files[0].size(), files[1].size(),
                    ok ? "identical" : "different")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    unsigned threads = 0;
    std::vector<int> only, known;
    app.add_option("--threads", threads, "Worker threads (0: all cores)");
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--known-failure", known, "Criteria whose documented failure does not set the exit code");
    CLI11_PARSE(app, argc, argv);
    const std::set<int> selected(only.begin(), only.end());
    const std::set<int> excused(known.begin(), known.end());
    auto wanted = [&](int i) { return selected.empty() || selected.count(i) > 0; };

    int failed = 0, failed_known = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& run) {
        if (!wanted(id)) return;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(Clock::now() - t0).count();
        const bool is_known = excused.count(id) > 0;
        std::printf("%s %2d %-28s %s [%.1f s]%s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s,
                    !o.pass && is_known ? " (known failure)" : "");
        std::fflush(stdout);
        if (!o.pass) ++(is_known ? failed_known : failed);
    };

    report(1, "safety-invariance", [&] { return safety_invariance(threads); });
    report(2, "projection-oracle", projection_equivalence);
    report(3, "safe-set-geometry", safe_set_geometry);
    report(4, "paper-constants", paper_constants);

    if (wanted(5) || wanted(6) || wanted(7)) {
        ExperimentConfig cfg = load_config(std::string(PTCBF_CONFIG_DIR) + "/train.json");
        const auto t0 = Clock::now();
        TrainResult trained;
        std::string error;
        try {
            trained = train(cfg);
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        if (!error.empty()) trained.abort_reason = error, trained.aborted = true;
        const PolicyParams& policy = trained.checkpoint.policy;
        const bool usable = !trained.aborted && !trained.curve.empty();
        report(5, "conservatism-ordering", [&] {
            return usable ? conservatism(cfg, policy, threads) : Outcome{false, "no trained policy"};
        });
        report(6, "training-viability", [&] { return training_viability(trained, secs); });
        report(7, "table2-direction", [&] {
            return usable ? table2_direction(cfg, policy, threads) : Outcome{false, "no trained policy"};
        });
    }

    report(8, "reward-arithmetic", reward_arithmetic);
    report(9, "gradient-check", gradient_check);
    report(10, "determinism", determinism);

    std::printf("%d criteria failed, %d of them known failures\n", failed + failed_known, failed_known);
    return failed == 0 ? 0 : 1;
}
