#pragma once

// Planar quadruped surrogate: first-order base-velocity dynamics at 25 Hz with
// a single-step action delay, a relaxing body height and a four-leg gait
// phase. Two skills (walk, crawl) differ only in their nominal body height.

#include <cfgloco/linalg.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace cfgloco {

enum class Skill : int { Walk = 0, Crawl = 1 };
inline constexpr int kNumSkills = 2;
inline constexpr int kActionDim = 5;
inline constexpr int kObsDim = 6;

std::string_view to_string(Skill s);
Skill parse_skill(std::string_view name);

struct Command {
    double vx = 0.0;
    double vy = 0.0;
    double wz = 0.0;
};

/// Symmetric ranges commands are drawn from.
struct CommandBox {
    double vx_max = 0.8;
    double vy_max = 0.5;
    double wz_max = 1.0;

    bool contains(const Command& c) const;
};

/// Velocity deltas (m/s^2, rad/s^2), height-target delta (m) and gait phase
/// rate offset (rad/s).
struct Action {
    double a_vx = 0.0;
    double a_vy = 0.0;
    double a_wz = 0.0;
    double a_h = 0.0;
    double a_phi = 0.0;

    std::array<double, kActionDim> to_array() const { return {a_vx, a_vy, a_wz, a_h, a_phi}; }
    static Action from_array(const double* v) { return {v[0], v[1], v[2], v[3], v[4]}; }
    bool finite() const;
};

struct EnvConfig {
    double dt = 0.04;
    std::array<double, 3> accel_limit{4.0, 4.0, 6.0};
    double height_delta_limit = 0.3;
    double height_gain = 0.2;      // share of the height delta realised per step
    double phase_rate_limit = 6.0;
    double gait_frequency = 1.5;   // Hz
    double h_min = 0.15;
    double h_max = 0.8;
    double vx_limit = 1.5;
    std::array<double, kNumSkills> skill_height{0.55, 0.30};

    // scripted expert
    double velocity_gain = 5.0;
    double gait_amplitude = 0.8;

    // data collection
    int episode_length = 250;
    int command_segment_min = 40;
    int command_segment_max = 125;
    std::array<double, kActionDim> action_noise{0.4, 0.4, 0.6, 0.01, 0.3};
    double init_height_min = 0.25;
    double init_height_max = 0.65;
    // initial base velocity is drawn from the command box scaled by this
    double init_velocity_scale = 1.5;
    // per-step probability of a random base-velocity kick of up to
    // push_fraction of the command box on each axis
    double push_prob = 0.02;
    double push_fraction = 0.75;
    CommandBox commands{};

    double nominal_height(Skill s) const { return skill_height[static_cast<std::size_t>(s)]; }
    void validate() const;
};

struct EnvState {
    double vx = 0.0;
    double vy = 0.0;
    double wz = 0.0;
    double h = 0.45;
    std::array<double, 4> phase{0.0, 3.141592653589793, 3.141592653589793, 0.0};
    /// Action issued on the previous step; applied on the next one.
    Action last_action{};
};

struct StepResult {
    EnvState state;
    Vec obs;
    bool terminated = false;
};

Action clamp_action(const Action& a, const EnvConfig& cfg);

/// [vx, vy, wz, h, sin(phi0), cos(phi0)]. The queued action is left out: a
/// planner that sees its previous command learns to repeat it.
Vec observe(const EnvState& s);

bool is_terminal(const EnvState& s, const EnvConfig& cfg);

/// Advances one control period. The action passed in is clamped and queued;
/// the previously queued action drives this step's dynamics.
StepResult step(const EnvState& state, const Action& action, const EnvConfig& cfg);

/// Proportional velocity tracking, proportional height tracking toward the
/// skill's nominal height, and a phase-dependent gait-rate modulation.
Action expert_action(const EnvState& state, const Command& command, Skill skill, const EnvConfig& cfg);

/// Standing state at the skill's nominal height.
EnvState rest_state(Skill skill, const EnvConfig& cfg);

}  // namespace cfgloco
