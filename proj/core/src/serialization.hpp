#pragma once

// JSON mappings for configuration structs stored in artifact headers.

#include <cfgloco/dataset.hpp>
#include <cfgloco/denoiser.hpp>
#include <cfgloco/diffusion.hpp>
#include <cfgloco/env.hpp>
#include <cfgloco/train.hpp>

#include <nlohmann/json.hpp>

namespace cfgloco {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CommandBox, vx_max, vy_max, wz_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EnvConfig, dt, accel_limit, height_delta_limit, height_gain, phase_rate_limit,
                                   gait_frequency, h_min, h_max, vx_limit, skill_height, velocity_gain,
                                   gait_amplitude, episode_length, command_segment_min, command_segment_max,
                                   action_noise, init_height_min, init_height_max, init_velocity_scale,
                                   push_prob, push_fraction, commands)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LogLogistic, location, scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SigmaSchedule, sigma_min, sigma_max, rho, sigma_data, train_dist)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, horizon, action_dim, obs_dim, t_cond, n_skills, n_layers, n_heads,
                                   d_model, ff_mult, mask_prob)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReturnStats, temperature, r_min, r_max, normalize)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(VelocityTarget, value, active)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, epochs, batch_size, lr, seed, grad_clip, steps_per_epoch, beta1, beta2,
                                   adam_eps)

inline nlohmann::json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec vec_from_json(const nlohmann::json& j) {
    const auto x = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size()));
}

}  // namespace cfgloco
