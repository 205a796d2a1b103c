#include <cfgloco/env.hpp>
#include <cfgloco/errors.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cfgloco {

std::string_view to_string(Skill s) { return s == Skill::Walk ? "walk" : "crawl"; }

Skill parse_skill(std::string_view name) {
    if (name == "walk") return Skill::Walk;
    if (name == "crawl") return Skill::Crawl;
    throw InvalidArgument("unknown skill '" + std::string(name) + "'");
}

bool CommandBox::contains(const Command& c) const {
    return std::abs(c.vx) <= vx_max && std::abs(c.vy) <= vy_max && std::abs(c.wz) <= wz_max;
}

bool Action::finite() const {
    return std::isfinite(a_vx) && std::isfinite(a_vy) && std::isfinite(a_wz) && std::isfinite(a_h) &&
           std::isfinite(a_phi);
}

void EnvConfig::validate() const {
    if (!(dt > 0.0)) throw InvalidArgument("env: dt must be positive");
    if (!(h_min < h_max)) throw InvalidArgument("env: h_min must be below h_max");
    if (episode_length < 1) throw InvalidArgument("env: episode_length must be positive");
    if (command_segment_min < 1 || command_segment_max < command_segment_min)
        throw InvalidArgument("env: invalid command segment range");
    if (!(init_height_min < init_height_max)) throw InvalidArgument("env: invalid initial height range");
    if (!(init_velocity_scale >= 0.0)) throw InvalidArgument("env: init_velocity_scale must be >= 0");
    if (!(push_prob >= 0.0 && push_prob <= 1.0)) throw InvalidArgument("env: push_prob must lie in [0, 1]");
    if (!(push_fraction >= 0.0)) throw InvalidArgument("env: push_fraction must be >= 0");
}

Action clamp_action(const Action& a, const EnvConfig& cfg) {
    Action c;
    c.a_vx = std::clamp(a.a_vx, -cfg.accel_limit[0], cfg.accel_limit[0]);
    c.a_vy = std::clamp(a.a_vy, -cfg.accel_limit[1], cfg.accel_limit[1]);
    c.a_wz = std::clamp(a.a_wz, -cfg.accel_limit[2], cfg.accel_limit[2]);
    c.a_h = std::clamp(a.a_h, -cfg.height_delta_limit, cfg.height_delta_limit);
    c.a_phi = std::clamp(a.a_phi, -cfg.phase_rate_limit, cfg.phase_rate_limit);
    return c;
}

Vec observe(const EnvState& s) {
    Vec o(kObsDim);
    o << s.vx, s.vy, s.wz, s.h, std::sin(s.phase[0]), std::cos(s.phase[0]);
    return o;
}

bool is_terminal(const EnvState& s, const EnvConfig& cfg) {
    return s.h < cfg.h_min || s.h > cfg.h_max || std::abs(s.vx) > cfg.vx_limit;
}

StepResult step(const EnvState& state, const Action& action, const EnvConfig& cfg) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    StepResult r;
    EnvState& n = r.state;
    n = state;
    const Action& applied = state.last_action;
    n.vx += applied.a_vx * cfg.dt;
    n.vy += applied.a_vy * cfg.dt;
    n.wz += applied.a_wz * cfg.dt;
    n.h += cfg.height_gain * applied.a_h;
    const double rate = two_pi * cfg.gait_frequency + applied.a_phi;
    for (auto& p : n.phase) {
        p = std::fmod(p + rate * cfg.dt, two_pi);
        if (p < 0.0) p += two_pi;
    }
    n.last_action = clamp_action(action, cfg);
    r.obs = observe(n);
    r.terminated = is_terminal(n, cfg);
    return r;
}

Action expert_action(const EnvState& state, const Command& command, Skill skill, const EnvConfig& cfg) {
    Action a;
    a.a_vx = cfg.velocity_gain * (command.vx - state.vx);
    a.a_vy = cfg.velocity_gain * (command.vy - state.vy);
    a.a_wz = cfg.velocity_gain * (command.wz - state.wz);
    a.a_h = cfg.nominal_height(skill) - state.h;
    a.a_phi = cfg.gait_amplitude * std::sin(state.phase[0]);
    return clamp_action(a, cfg);
}

EnvState rest_state(Skill skill, const EnvConfig& cfg) {
    EnvState s;
    s.h = cfg.nominal_height(skill);
    return s;
}

}  // namespace cfgloco
