#pragma once

// Trajectory generation from a denoiser D(x; sigma). All samplers integrate the
// probability-flow ODE dx/dsigma = (x - D(x; sigma)) / sigma on a Karras grid.

#include <cfgloco/diffusion.hpp>
#include <cfgloco/linalg.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace cfgloco {

enum class SamplerKind { DDPM, DDIM, DPMPP2M };

std::string_view to_string(SamplerKind kind);
/// Accepts "ddpm", "ddim", "dpmpp2m" (case-insensitive, "dpm++2m" too).
SamplerKind parse_sampler_kind(std::string_view name);

struct SamplerConfig {
    SamplerKind kind = SamplerKind::DDIM;
    int n_steps = 3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// D(x; sigma) for a (possibly row-stacked) batch of trajectories.
using DenoiseFn = std::function<Mat(const Mat& x, double sigma)>;

/// Draws x ~ N(0, sigma_max^2 I) of the given shape from `cfg.seed` and runs the
/// configured stepper. The final grid entry (sigma = 0) returns D at the last
/// positive sigma. Throws DivergedSampleError if a step yields non-finite values.
Mat sample(const DenoiseFn& denoise_fn, const SamplerConfig& cfg, const SigmaSchedule& sched,
           Eigen::Index rows, Eigen::Index cols);

/// Runs the stepper from a caller-provided initial state (already at sigma_max).
/// `rng` supplies ancestral noise for DDPM and is untouched by DDIM/DPM++(2M).
Mat sample_from(const DenoiseFn& denoise_fn, SamplerKind kind, const std::vector<double>& sigmas,
                Mat x, std::mt19937_64& rng);

struct LangevinConfig {
    double epsilon = 1e-2;
    int n_iters = 100;
    std::uint64_t seed = 0;
    /// Multiplier on the injected Gaussian term; 0 pins z to zero.
    double noise_scale = 1.0;
};

using ScoreFn = std::function<Mat(const Mat& x)>;
using LangevinObserver = std::function<void(int iter, const Mat& x)>;

/// x <- x + (eps/2) score(x) + sqrt(eps) z, n_iters times at a fixed noise level.
/// Test oracle only. Throws DivergedSampleError once ||x|| exceeds 1e6.
Mat langevin_reference(const ScoreFn& score_fn, const LangevinConfig& cfg, Mat init,
                       const LangevinObserver& observer = {});

/// Fills `m` with standard normal draws from `rng`.
void fill_standard_normal(Mat& m, std::mt19937_64& rng);

}  // namespace cfgloco
