#pragma once

// Scripted-expert data collection and offline reward/return labelling.

#include <cfgloco/env.hpp>
#include <cfgloco/linalg.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cfgloco {

/// Target base velocity. Only active components enter the reward.
struct VelocityTarget {
    std::array<double, 3> value{0.0, 0.0, 0.0};
    std::array<bool, 3> active{false, false, false};

    /// Single active component; axis is "vx", "vy" or "wz".
    static VelocityTarget on_axis(std::string_view axis, double value);
    /// Parses "vx=0.8" style specs (comma-separated for several components).
    static VelocityTarget parse(std::string_view spec);
    std::string describe() const;
    bool any() const { return active[0] || active[1] || active[2]; }
    /// Command an expert with access to the target would track: the target on
    /// active axes, zero elsewhere.
    Command as_command() const;
};

/// r = exp(-3 * sum_active (v_i - target_i)^2) - 1, in (-1, 0].
double velocity_reward(const std::array<double, 3>& velocity, const VelocityTarget& target);

/// Return scaling: R = exp(R0 / temperature), optionally min-max normalised
/// to [0, 1] over the whole dataset.
struct ReturnStats {
    double temperature = 10.0;
    double r_min = 0.0;
    double r_max = 1.0;
    bool normalize = true;

    double scale(double raw_return) const;
};

struct EpisodeInfo {
    std::size_t offset = 0;
    std::size_t length = 0;
    Skill skill = Skill::Walk;
};

struct ReturnLabels {
    VelocityTarget target;
    double gamma = 0.99;
    int horizon = 50;
    ReturnStats stats;
    std::vector<double> reward;
    std::vector<double> raw_return;     // R0
    std::vector<double> scaled_return;  // empty until label_returns
};

struct Dataset {
    EnvConfig env;
    std::uint64_t seed = 0;
    std::size_t steps_per_skill = 0;
    std::vector<EpisodeInfo> episodes;
    Mat obs;        // N x kObsDim, observed before the action
    Mat actions;    // N x kActionDim, as issued (clamped)
    Mat velocity;   // N x 3, base velocity after the step
    Mat commands;   // N x 3, only meaningful to a command-aware baseline
    std::vector<std::uint8_t> terminated;
    std::optional<ReturnLabels> labels;

    std::size_t size() const { return static_cast<std::size_t>(obs.rows()); }
    bool has_returns() const { return labels && !labels->scaled_return.empty(); }
    /// Throws InvalidArgument when an episode mixes skills or arrays disagree.
    void validate() const;
};

/// Rolls out the scripted expert for each skill. Episodes last
/// env.episode_length steps (the last one per skill is shortened so each skill
/// contributes exactly steps_per_skill records). Commands are redrawn
/// uniformly from the command box at random segment boundaries; initial
/// velocities and heights are randomised.
Dataset collect_dataset(std::size_t steps_per_skill, std::uint64_t seed, const EnvConfig& env = {});

/// Per-step reward from the recorded base velocity. Clears any return labels.
Dataset label_rewards(Dataset ds, const VelocityTarget& target);

/// R0_t = sum_{k<horizon} gamma^k r_{t+k}, truncated at the episode end, then
/// R = exp(R0 / A) and, with normalize, min-max scaling over the dataset.
/// Fills stats.r_min/r_max. Throws InvalidArgument for horizon < 1 or a
/// degenerate return range.
Dataset label_returns(Dataset ds, double gamma, int horizon, ReturnStats stats);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// SHA-256 over every record array and label array.
std::string dataset_content_hash(const Dataset& ds);

}  // namespace cfgloco
