#pragma once

// Central finite-difference check of the analytic DSM-loss gradients, run in
// double precision on a tiny decoder.

#include <cfgloco/denoiser.hpp>
#include <cfgloco/train.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace cfgloco {

struct GradCheckConfig {
    ModelConfig model = tiny_model();
    int batch = 3;
    double step = 1e-5;
    std::uint64_t seed = 1;
    /// Fraction of returns replaced by MASK in the probe batch.
    double mask_fraction = 0.34;
    /// Perturb the initial weights so LayerNorm gains/zero-initialised
    /// tensors are not at special values.
    double param_jitter = 0.05;

    /// 2 layers, d_model 16, short horizon.
    static ModelConfig tiny_model();
    /// n_layers = 0: embedding + head only, quadratic in every single weight.
    static ModelConfig linear_model();
};

struct GroupError {
    std::string group;
    std::size_t n_params = 0;
    double max_abs_analytic = 0.0;
    double max_abs_diff = 0.0;
    /// max |analytic - numeric| / max(1e-8, max |analytic|, max |numeric|).
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GroupError> groups;
    double max_rel_error = 0.0;
};

/// Random probe batch (clean actions, noise levels, conditioning) for a model.
DsmBatch make_probe_batch(const ModelConfig& cfg, int batch, std::uint64_t seed, double mask_fraction,
                          const SigmaSchedule& sched = {});

GradCheckReport grad_check(const DecoderNet<double>& net, const nn::ParamBuffer<double>& params,
                           const SigmaSchedule& sched, const DsmBatch& batch, double step = 1e-5);

/// Builds the model, weights and probe batch from `cfg` and checks them.
GradCheckReport grad_check(const GradCheckConfig& cfg);

}  // namespace cfgloco
