#pragma once

#include <cfgloco/dataset.hpp>
#include <cfgloco/denoiser.hpp>
#include <cfgloco/env.hpp>
#include <cfgloco/train.hpp>

#include <filesystem>
#include <random>
#include <string>

namespace fixtures {

inline cfgloco::ModelConfig small_model() {
    cfgloco::ModelConfig m;
    m.d_model = 16;
    m.n_heads = 2;
    m.n_layers = 1;
    m.horizon = 4;
    m.t_cond = 2;
    return m;
}

// Untrained weights wrapped as a model with identity normalisation.
inline cfgloco::TrainedModel random_model(const cfgloco::ModelConfig& cfg, std::uint64_t seed,
                                          double mask_prob = 0.2) {
    cfgloco::TrainedModel m;
    m.model = cfg;
    m.model.mask_prob = mask_prob;
    m.norm.obs_mean = cfgloco::Vec::Zero(cfg.obs_dim);
    m.norm.obs_std = cfgloco::Vec::Ones(cfg.obs_dim);
    m.norm.act_mean = cfgloco::Vec::Zero(cfg.action_dim);
    m.norm.act_std = cfgloco::Vec::Ones(cfg.action_dim);
    const cfgloco::DecoderNet<float> net(m.model);
    m.params = net.init_params(seed);
    // give the return projection some weight so branches differ
    const auto& layout = net.layout();
    auto rw = m.params.view(layout[layout.find("embed.return.w")]);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<float> n(0.0f, 0.5f);
    for (Eigen::Index i = 0; i < rw.size(); ++i) rw.data()[i] = n(rng);
    return m;
}

inline cfgloco::Conditioning random_conditioning(const cfgloco::ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    cfgloco::Conditioning c;
    c.obs_history.resize(cfg.t_cond, cfg.obs_dim);
    for (Eigen::Index i = 0; i < c.obs_history.size(); ++i) c.obs_history.data()[i] = n(rng);
    c.skill = static_cast<int>(seed % static_cast<std::uint64_t>(cfg.n_skills));
    c.return_value = 0.7;
    return c;
}

inline cfgloco::Dataset labelled_dataset(std::size_t steps_per_skill, std::uint64_t seed) {
    auto ds = cfgloco::label_rewards(cfgloco::collect_dataset(steps_per_skill, seed),
                                     cfgloco::VelocityTarget::on_axis("vx", 0.8));
    return cfgloco::label_returns(ds, 0.99, 50, cfgloco::ReturnStats{});
}

inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "cfgloco_unit";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace fixtures
