#pragma once

// Classifier-free guidance: D = (1 - lambda) D(x; MASK) + lambda D(x; R*).

#include <cfgloco/samplers.hpp>
#include <cfgloco/train.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cfgloco {

struct GuidanceConfig {
    double lambda = 1.5;
    double target_return = 1.0;
    /// Lets target_return leave [0, 1] (unnormalised-return probe).
    bool allow_out_of_range = false;

    void validate() const;
    /// target_return, clamped to [0, 1] unless allow_out_of_range.
    double effective_target() const;
};

/// (1 - lambda) d_uncond + lambda d_cond; lambda 0 and 1 return the matching
/// branch unchanged.
Mat combine_guidance(const Mat& d_uncond, const Mat& d_cond, double lambda);

/// Guided denoiser from two arbitrary branch functions.
Mat cfg_denoise(const DenoiseFn& uncond, const DenoiseFn& cond, const Mat& x, double sigma,
                const GuidanceConfig& g);

/// Guided denoiser over a trained model for a batch of conditionings (their
/// return_value is ignored). Counts network evaluations.
class GuidedDenoiser {
public:
    GuidedDenoiser(const TrainedModel& model, const DecoderNet<float>& net, std::vector<Conditioning> conds,
                   GuidanceConfig g);

    Mat operator()(const Mat& x, double sigma);
    /// Single-branch evaluations, for comparisons against plain sampling.
    Mat unconditional(const Mat& x, double sigma);
    Mat conditional(const Mat& x, double sigma);

    std::size_t calls() const { return calls_; }
    /// Non-empty when the model never saw a masked return during training.
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    const TrainedModel& model_;
    const DecoderNet<float>& net_;
    std::vector<Conditioning> uncond_;
    std::vector<Conditioning> cond_;
    GuidanceConfig g_;
    std::size_t calls_ = 0;
    std::vector<std::string> warnings_;
};

struct GuidedSample {
    Mat actions;  // (B*T) x action_dim, de-normalised
    std::size_t denoiser_calls = 0;
    std::vector<std::string> warnings;
};

/// Runs the configured sampler with the guided denoiser and maps the result
/// back to environment action units.
GuidedSample guided_sampler(const TrainedModel& model, const DecoderNet<float>& net, const SamplerConfig& sampler,
                            const GuidanceConfig& g, std::span<const Conditioning> conds);

}  // namespace cfgloco
