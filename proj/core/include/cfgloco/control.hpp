#pragma once

// Receding-horizon control with the guided sampler, and the evaluation suite:
// tracking evaluation, lambda sweep, return-scaling ablation, skill switch and
// control-step latency.

#include <cfgloco/dataset.hpp>
#include <cfgloco/env.hpp>
#include <cfgloco/guidance.hpp>
#include <cfgloco/samplers.hpp>
#include <cfgloco/train.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cfgloco {

/// Hard one-hot switch from `initial` to `after` at `switch_step` (never when < 0).
struct SkillSchedule {
    Skill initial = Skill::Walk;
    int switch_step = -1;
    Skill after = Skill::Crawl;

    Skill at(int t) const { return switch_step >= 0 && t >= switch_step ? after : initial; }
};

struct RolloutConfig {
    int n_envs = 100;
    int steps = 250;
    std::uint64_t seed = 0;
    EnvConfig env{};
    VelocityTarget target = VelocityTarget::on_axis("vx", 0.8);
    SkillSchedule skills{};
    double init_velocity_jitter = 0.1;
    double init_height_jitter = 0.02;

    void validate() const;
};

struct EpisodeTrace {
    std::vector<double> score;  // r + 1, in (0, 1]
    std::vector<double> height;
    std::vector<double> vx;
    std::vector<double> vy;
    std::vector<double> wz;
    std::vector<int> skill;
    bool terminated = false;
    /// Leading control steps whose observation history was padded.
    int padded_steps = 0;

    std::size_t length() const { return score.size(); }
};

/// What a batch policy sees at one control step, for the still-running envs.
struct PolicyInput {
    int t = 0;
    std::span<const std::size_t> env_ids;
    std::span<const EnvState> states;
    std::span<const Mat> obs_histories;  // raw, t_cond x obs_dim, oldest first
    std::span<const Skill> skills;
};

using BatchPolicy = std::function<std::vector<Action>(const PolicyInput&)>;

struct RolloutResult {
    std::vector<EpisodeTrace> traces;
    std::vector<double> step_seconds;  // policy wall-clock per control step
    int diverged_steps = 0;
};

/// Rolls out n_envs environments in lockstep. A policy that throws
/// DivergedSampleError terminates every env still running at that step.
RolloutResult run_rollouts(const BatchPolicy& policy, const RolloutConfig& cfg, int history_len = 4);

/// Scripted expert tracking target.as_command().
BatchPolicy expert_policy(const EnvConfig& env, const VelocityTarget& target);

/// Plans a T-step trajectory per env with the guided sampler and returns its
/// first action. Initial noise is keyed by (sampler.seed, t, env id).
BatchPolicy diffusion_policy(const TrainedModel& model, const DecoderNet<float>& net, const SamplerConfig& sampler,
                             const GuidanceConfig& guidance);

RolloutResult run_receding_horizon(const TrainedModel& model, const RolloutConfig& rollout,
                                   const SamplerConfig& sampler, const GuidanceConfig& guidance);

struct EvalConfig {
    RolloutConfig rollout{};
    SamplerConfig sampler{};
    GuidanceConfig guidance{};
};

/// Tracking score statistics over n_envs x steps. Steps after a termination
/// score 0 (the worst per-step value). Termination rate is the fraction of
/// episodes that terminated.
struct EvalReport {
    std::string label;
    std::string sampler;
    double lambda = 0.0;
    std::string target;
    std::uint64_t seed = 0;
    int n_envs = 0;
    int steps = 0;
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double termination_rate = 0.0;
    double mean_step_ms = 0.0;
    double p99_step_ms = 0.0;
    std::vector<EpisodeTrace> traces;
};

EvalReport summarize(const RolloutResult& r, const RolloutConfig& cfg, std::string label);

EvalReport eval_expert(const RolloutConfig& cfg);
EvalReport eval_tracking(const TrainedModel& model, const EvalConfig& cfg);

struct SweepPoint {
    double lambda = 0.0;
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double termination_rate = 0.0;
};

struct LambdaSweep {
    std::vector<SweepPoint> points;
    std::size_t best = 0;  // argmax of mean reward, first on ties
    double best_lambda() const { return points.at(best).lambda; }
    const SweepPoint& at(double lambda) const;
};

/// Grid must contain 0, 1 and at least one value above 2.
LambdaSweep sweep_lambda(const TrainedModel& model, const std::vector<double>& grid, const EvalConfig& base);

struct AblationVariant {
    std::string name;
    const TrainedModel* model = nullptr;
};

struct AblationRow {
    std::string name;
    double unconditional_reward = 0.0;
    double best_guided_reward = 0.0;
    double best_lambda = 0.0;
    double termination_rate = 0.0;  // at best_lambda
    LambdaSweep sweep;
};

std::vector<AblationRow> ablate_return_scaling(const std::vector<AblationVariant>& variants,
                                               const std::vector<double>& grid, const EvalConfig& base);

struct SkillSwitchReport {
    EvalReport eval;
    int switch_step = 0;
    std::vector<double> mean_height;  // over envs still running
    double new_nominal_height = 0.0;
    /// Steps after the switch until the mean height stays within 10% of the
    /// new nominal height; -1 if it never does.
    int settle_steps = -1;
    double settle_seconds = -1.0;
    int terminations = 0;
    double window_reward = 0.0;  // +-1 s around the switch
    double steady_reward = 0.0;  // outside the window, after the first 2 s
    double window_ratio = 0.0;
};

SkillSwitchReport skill_switch_experiment(const TrainedModel& model, int switch_step, const EvalConfig& cfg);

struct LatencyOptions {
    int samples = 200;
    int warmup = 10;
    bool guided = true;
};

struct LatencyStats {
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
    std::size_t denoiser_calls_per_step = 0;
};

/// Wall-clock of single-env control steps (conditioning, sampling, first action).
LatencyStats latency_probe(const TrainedModel& model, const SamplerConfig& sampler, const GuidanceConfig& guidance,
                           const LatencyOptions& opt = {});

/// One row per (label, sampler, lambda, target, seed, metric).
void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
/// Per-step columns t, reward, height, v_x, skill, terminated for every env.
void write_trace_csv(const std::filesystem::path& path, const EvalReport& report);
void write_sweep_csv(const std::filesystem::path& path, const LambdaSweep& sweep, const std::string& label);
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

/// Value at quantile q in [0, 1] (nearest rank).
double quantile(std::vector<double> v, double q);

}  // namespace cfgloco
