#include <cfgloco/control.hpp>
#include <cfgloco/csv.hpp>
#include <cfgloco/errors.hpp>

#include "rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

namespace cfgloco {

namespace {
constexpr std::uint64_t kInitKey = 0x1417;
constexpr std::uint64_t kNoiseKey = 0x401E;
constexpr std::uint64_t kAncestralKey = 0xDD9;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

EnvState initial_state(const RolloutConfig& cfg, std::size_t env_id) {
    auto rng = detail::keyed_rng({cfg.seed, env_id, kInitKey});
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    EnvState s = rest_state(cfg.skills.at(0), cfg.env);
    s.vx = cfg.init_velocity_jitter * unit(rng);
    s.vy = cfg.init_velocity_jitter * unit(rng);
    s.wz = cfg.init_velocity_jitter * unit(rng);
    s.h += cfg.init_height_jitter * unit(rng);
    const double p0 = phase(rng);
    const double p1 = std::fmod(p0 + std::numbers::pi, 2.0 * std::numbers::pi);
    s.phase = {p0, p1, p1, p0};
    return s;
}
}  // namespace

void RolloutConfig::validate() const {
    if (n_envs < 1) throw InvalidArgument("rollout: n_envs must be >= 1");
    if (steps < 1) throw InvalidArgument("rollout: steps must be >= 1");
    if (!target.any()) throw InvalidArgument("rollout: velocity target has no active component");
    env.validate();
}

RolloutResult run_rollouts(const BatchPolicy& policy, const RolloutConfig& cfg, int history_len) {
    cfg.validate();
    if (history_len < 1) throw InvalidArgument("rollout: history length must be >= 1");
    const auto n = static_cast<std::size_t>(cfg.n_envs);
    const auto hl = static_cast<Eigen::Index>(history_len);
    RolloutResult out;
    out.traces.resize(n);
    std::vector<EnvState> state(n);
    std::vector<Mat> history(n);
    std::vector<bool> alive(n, true);
    for (std::size_t i = 0; i < n; ++i) {
        state[i] = initial_state(cfg, i);
        const Vec o = observe(state[i]);
        history[i] = o.transpose().replicate(hl, 1);
        out.traces[i].padded_steps = history_len - 1;
    }

    std::vector<std::size_t> ids;
    std::vector<EnvState> st;
    std::vector<Mat> hist;
    std::vector<Skill> skills;
    for (int t = 0; t < cfg.steps; ++t) {
        ids.clear();
        st.clear();
        hist.clear();
        skills.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (!alive[i]) continue;
            ids.push_back(i);
            st.push_back(state[i]);
            hist.push_back(history[i]);
            skills.push_back(cfg.skills.at(t));
        }
        if (ids.empty()) break;
        const PolicyInput in{t, ids, st, hist, skills};
        std::vector<Action> actions;
        const auto t0 = Clock::now();
        try {
            actions = policy(in);
        } catch (const DivergedSampleError&) {
            ++out.diverged_steps;
            for (auto i : ids) {
                alive[i] = false;
                out.traces[i].terminated = true;
            }
            out.step_seconds.push_back(seconds_since(t0));
            continue;
        }
        out.step_seconds.push_back(seconds_since(t0));
        if (actions.size() != ids.size()) throw InvalidArgument("rollout: policy returned the wrong number of actions");

        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t i = ids[k];
            const StepResult r = step(state[i], actions[k], cfg.env);
            state[i] = r.state;
            auto& tr = out.traces[i];
            tr.score.push_back(velocity_reward({r.state.vx, r.state.vy, r.state.wz}, cfg.target) + 1.0);
            tr.height.push_back(r.state.h);
            tr.vx.push_back(r.state.vx);
            tr.vy.push_back(r.state.vy);
            tr.wz.push_back(r.state.wz);
            tr.skill.push_back(static_cast<int>(skills[k]));
            if (r.terminated) {
                alive[i] = false;
                tr.terminated = true;
                continue;
            }
            auto& h = history[i];
            if (hl > 1) h.topRows(hl - 1) = h.bottomRows(hl - 1).eval();
            h.row(hl - 1) = r.obs.transpose();
        }
    }
    return out;
}

BatchPolicy expert_policy(const EnvConfig& env, const VelocityTarget& target) {
    const Command cmd = target.as_command();
    return [env, cmd](const PolicyInput& in) {
        std::vector<Action> a;
        a.reserve(in.states.size());
        for (std::size_t k = 0; k < in.states.size(); ++k)
            a.push_back(expert_action(in.states[k], cmd, in.skills[k], env));
        return a;
    };
}

BatchPolicy diffusion_policy(const TrainedModel& model, const DecoderNet<float>& net, const SamplerConfig& sampler,
                             const GuidanceConfig& guidance) {
    sampler.validate();
    guidance.validate();
    const auto sigmas = karras_sigma_grid(sampler.n_steps, model.sched);
    return [&model, &net, sampler, guidance, sigmas](const PolicyInput& in) {
        const auto& mc = model.model;
        const Eigen::Index t = mc.horizon;
        const std::size_t b = in.env_ids.size();
        std::vector<Conditioning> conds(b);
        Mat x(static_cast<Eigen::Index>(b) * t, mc.action_dim);
        Mat block(t, mc.action_dim);
        for (std::size_t k = 0; k < b; ++k) {
            conds[k].obs_history = model.norm.normalize_obs(in.obs_histories[k]);
            conds[k].skill = static_cast<int>(in.skills[k]);
            auto rng = detail::keyed_rng({sampler.seed, static_cast<std::uint64_t>(in.t), in.env_ids[k], kNoiseKey});
            fill_standard_normal(block, rng);
            x.middleRows(static_cast<Eigen::Index>(k) * t, t) = model.sched.sigma_max * block;
        }
        GuidedDenoiser d(model, net, std::move(conds), guidance);
        auto rng = detail::keyed_rng({sampler.seed, static_cast<std::uint64_t>(in.t), kAncestralKey});
        const Mat out = sample_from([&](const Mat& xi, double s) { return d(xi, s); }, sampler.kind, sigmas,
                                    std::move(x), rng);
        std::vector<Action> actions(b);
        for (std::size_t k = 0; k < b; ++k) {
            const Vec first = model.norm.denormalize_actions(out.row(static_cast<Eigen::Index>(k) * t)).transpose();
            actions[k] = Action::from_array(first.data());
        }
        return actions;
    };
}

RolloutResult run_receding_horizon(const TrainedModel& model, const RolloutConfig& rollout,
                                   const SamplerConfig& sampler, const GuidanceConfig& guidance) {
    const DecoderNet<float> net(model.model);
    return run_rollouts(diffusion_policy(model, net, sampler, guidance), rollout, model.model.t_cond);
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = std::ceil(q * static_cast<double>(v.size()));
    const auto idx = static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(v.size()))) - 1;
    return v[idx];
}

EvalReport summarize(const RolloutResult& r, const RolloutConfig& cfg, std::string label) {
    EvalReport rep;
    rep.label = std::move(label);
    rep.target = cfg.target.describe();
    rep.seed = cfg.seed;
    rep.n_envs = cfg.n_envs;
    rep.steps = cfg.steps;
    double sum = 0.0;
    double sq = 0.0;
    int terminated = 0;
    for (const auto& tr : r.traces) {
        for (double s : tr.score) {
            sum += s;
            sq += s * s;
        }
        if (tr.terminated) ++terminated;
    }
    const double total = static_cast<double>(cfg.n_envs) * cfg.steps;
    rep.mean_reward = sum / total;
    rep.std_reward = std::sqrt(std::max(0.0, sq / total - rep.mean_reward * rep.mean_reward));
    rep.termination_rate = static_cast<double>(terminated) / cfg.n_envs;
    if (!r.step_seconds.empty()) {
        rep.mean_step_ms =
            1e3 * std::accumulate(r.step_seconds.begin(), r.step_seconds.end(), 0.0) / r.step_seconds.size();
        rep.p99_step_ms = 1e3 * quantile(r.step_seconds, 0.99);
    }
    rep.traces = r.traces;
    return rep;
}

EvalReport eval_expert(const RolloutConfig& cfg) {
    EvalReport rep = summarize(run_rollouts(expert_policy(cfg.env, cfg.target), cfg), cfg, "expert");
    rep.sampler = "expert";
    return rep;
}

EvalReport eval_tracking(const TrainedModel& model, const EvalConfig& cfg) {
    EvalReport rep = summarize(run_receding_horizon(model, cfg.rollout, cfg.sampler, cfg.guidance), cfg.rollout,
                               "guided");
    rep.sampler = std::string(to_string(cfg.sampler.kind));
    rep.lambda = cfg.guidance.lambda;
    return rep;
}

const SweepPoint& LambdaSweep::at(double lambda) const {
    for (const auto& p : points)
        if (p.lambda == lambda) return p;
    throw InvalidArgument("lambda sweep: grid has no point at " + fmt_double(lambda));
}

LambdaSweep sweep_lambda(const TrainedModel& model, const std::vector<double>& grid, const EvalConfig& base) {
    const auto has = [&](double v) { return std::find(grid.begin(), grid.end(), v) != grid.end(); };
    if (!has(0.0) || !has(1.0) || std::none_of(grid.begin(), grid.end(), [](double v) { return v > 2.0; }))
        throw InvalidArgument("lambda sweep: grid must contain 0, 1 and a value above 2");
    LambdaSweep sweep;
    for (double lambda : grid) {
        EvalConfig cfg = base;
        cfg.guidance.lambda = lambda;
        const EvalReport r = eval_tracking(model, cfg);
        sweep.points.push_back({lambda, r.mean_reward, r.std_reward, r.termination_rate});
        if (r.mean_reward > sweep.points[sweep.best].mean_reward) sweep.best = sweep.points.size() - 1;
    }
    return sweep;
}

std::vector<AblationRow> ablate_return_scaling(const std::vector<AblationVariant>& variants,
                                               const std::vector<double>& grid, const EvalConfig& base) {
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        if (!v.model) throw InvalidArgument("ablation: variant '" + v.name + "' has no model");
        EvalConfig cfg = base;
        cfg.guidance.allow_out_of_range = !v.model->stats.normalize;
        AblationRow row;
        row.name = v.name;
        row.sweep = sweep_lambda(*v.model, grid, cfg);
        row.unconditional_reward = row.sweep.at(0.0).mean_reward;
        const auto& best = row.sweep.points[row.sweep.best];
        row.best_guided_reward = best.mean_reward;
        row.best_lambda = best.lambda;
        row.termination_rate = best.termination_rate;
        rows.push_back(std::move(row));
    }
    return rows;
}

SkillSwitchReport skill_switch_experiment(const TrainedModel& model, int switch_step, const EvalConfig& cfg) {
    if (switch_step < 1 || switch_step >= cfg.rollout.steps)
        throw InvalidArgument("skill switch: switch step must lie inside the episode");
    EvalConfig c = cfg;
    c.rollout.skills.switch_step = switch_step;
    SkillSwitchReport rep;
    rep.eval = eval_tracking(model, c);
    rep.eval.label = "skill-switch";
    rep.switch_step = switch_step;
    rep.new_nominal_height = c.rollout.env.nominal_height(c.rollout.skills.after);

    const int steps = c.rollout.steps;
    rep.mean_height.assign(static_cast<std::size_t>(steps), 0.0);
    for (int t = 0; t < steps; ++t) {
        double s = 0.0;
        int k = 0;
        for (const auto& tr : rep.eval.traces)
            if (static_cast<std::size_t>(t) < tr.length()) {
                s += tr.height[static_cast<std::size_t>(t)];
                ++k;
            }
        rep.mean_height[static_cast<std::size_t>(t)] = k ? s / k : std::nan("");
    }
    int last_bad = switch_step - 1;
    for (int t = switch_step; t < steps; ++t) {
        const double h = rep.mean_height[static_cast<std::size_t>(t)];
        if (!(std::abs(h - rep.new_nominal_height) <= 0.1 * rep.new_nominal_height)) last_bad = t;
    }
    if (last_bad < steps - 1) {
        rep.settle_steps = last_bad + 1 - switch_step;
        rep.settle_seconds = rep.settle_steps * c.rollout.env.dt;
    }
    for (const auto& tr : rep.eval.traces)
        if (tr.terminated) ++rep.terminations;

    const int half = static_cast<int>(std::lround(1.0 / c.rollout.env.dt));
    const int lo = std::max(0, switch_step - half);
    const int hi = std::min(steps, switch_step + half);
    const int settle_in = 2 * half;
    double win = 0.0, steady = 0.0;
    long n_win = 0, n_steady = 0;
    for (const auto& tr : rep.eval.traces) {
        for (int t = 0; t < steps; ++t) {
            const double s = static_cast<std::size_t>(t) < tr.length() ? tr.score[static_cast<std::size_t>(t)] : 0.0;
            if (t >= lo && t < hi) {
                win += s;
                ++n_win;
            } else if (t >= settle_in) {
                steady += s;
                ++n_steady;
            }
        }
    }
    rep.window_reward = n_win ? win / n_win : 0.0;
    rep.steady_reward = n_steady ? steady / n_steady : 0.0;
    rep.window_ratio = rep.steady_reward > 0.0 ? rep.window_reward / rep.steady_reward : 0.0;
    return rep;
}

LatencyStats latency_probe(const TrainedModel& model, const SamplerConfig& sampler, const GuidanceConfig& guidance,
                           const LatencyOptions& opt) {
    sampler.validate();
    guidance.validate();
    if (opt.samples < 1) throw InvalidArgument("latency: samples must be >= 1");
    const DecoderNet<float> net(model.model);
    const auto sigmas = karras_sigma_grid(sampler.n_steps, model.sched);
    const EnvConfig env;
    const EnvState s = rest_state(Skill::Walk, env);
    const Mat raw_history = observe(s).transpose().replicate(model.model.t_cond, 1);
    std::vector<double> ms;
    LatencyStats stats;
    for (int i = 0; i < opt.warmup + opt.samples; ++i) {
        const auto t0 = Clock::now();
        Conditioning c;
        c.obs_history = model.norm.normalize_obs(raw_history);
        c.skill = 0;
        c.return_value = guidance.effective_target();
        GuidedDenoiser d(model, net, {c}, guidance);
        auto rng = detail::keyed_rng({sampler.seed, static_cast<std::uint64_t>(i), kNoiseKey});
        Mat x(model.model.horizon, model.model.action_dim);
        fill_standard_normal(x, rng);
        x *= model.sched.sigma_max;
        DenoiseFn fn;
        if (opt.guided)
            fn = [&](const Mat& xi, double sg) { return d(xi, sg); };
        else
            fn = [&](const Mat& xi, double sg) { return d.conditional(xi, sg); };
        const Mat out = sample_from(fn, sampler.kind, sigmas, std::move(x), rng);
        const Vec first = model.norm.denormalize_actions(out.topRows(1)).transpose();
        volatile double sink = first(0);
        (void)sink;
        const double elapsed = seconds_since(t0) * 1e3;
        if (i >= opt.warmup) ms.push_back(elapsed);
        stats.denoiser_calls_per_step = d.calls();
    }
    stats.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
    stats.p50_ms = quantile(ms, 0.5);
    stats.p99_ms = quantile(ms, 0.99);
    stats.max_ms = *std::max_element(ms.begin(), ms.end());
    return stats;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
    CsvWriter w(path, {"label", "sampler", "lambda", "target", "seed", "metric", "value"});
    for (const auto& r : reports) {
        const std::vector<std::pair<std::string, double>> metrics = {
            {"mean_reward", r.mean_reward},       {"std_reward", r.std_reward},
            {"termination_rate", r.termination_rate}, {"n_envs", static_cast<double>(r.n_envs)},
            {"steps", static_cast<double>(r.steps)}};
        for (const auto& [name, value] : metrics)
            w.row({r.label, r.sampler, fmt_double(r.lambda), r.target, std::to_string(r.seed), name, fmt_double(value)});
    }
}

void write_trace_csv(const std::filesystem::path& path, const EvalReport& report) {
    CsvWriter w(path, {"env", "t", "reward", "height", "v_x", "skill", "terminated"});
    for (std::size_t e = 0; e < report.traces.size(); ++e) {
        const auto& tr = report.traces[e];
        for (std::size_t t = 0; t < tr.length(); ++t) {
            const bool last = tr.terminated && t + 1 == tr.length();
            w.row({std::to_string(e), std::to_string(t), fmt_double(tr.score[t] - 1.0), fmt_double(tr.height[t]),
                   fmt_double(tr.vx[t]), std::string(to_string(static_cast<Skill>(tr.skill[t]))), last ? "1" : "0"});
        }
    }
}

void write_sweep_csv(const std::filesystem::path& path, const LambdaSweep& sweep, const std::string& label) {
    CsvWriter w(path, {"label", "lambda", "mean_reward", "std_reward", "termination_rate", "best"});
    for (std::size_t i = 0; i < sweep.points.size(); ++i) {
        const auto& p = sweep.points[i];
        w.row({label, fmt_double(p.lambda), fmt_double(p.mean_reward), fmt_double(p.std_reward),
               fmt_double(p.termination_rate), i == sweep.best ? "1" : "0"});
    }
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
    CsvWriter w(path, {"variant", "unconditional_reward", "best_guided_reward", "best_lambda", "termination_rate"});
    for (const auto& r : rows)
        w.row({r.name, fmt_double(r.unconditional_reward), fmt_double(r.best_guided_reward), fmt_double(r.best_lambda),
               fmt_double(r.termination_rate)});
}

}  // namespace cfgloco
