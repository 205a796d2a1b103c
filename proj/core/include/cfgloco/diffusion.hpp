#pragma once

// Noise schedules, EDM-style preconditioning, the denoiser/score identity and
// the denoising score matching objective.

#include <cfgloco/linalg.hpp>

#include <functional>
#include <random>
#include <span>
#include <vector>

namespace cfgloco {

/// Parameters of the logistic distribution over ln(sigma) used at training time.
struct LogLogistic {
    double location = 0.0;
    double scale = 0.5;
};

struct SigmaSchedule {
    double sigma_min = 0.02;
    double sigma_max = 80.0;
    double rho = 7.0;
    double sigma_data = 1.0;
    LogLogistic train_dist{};

    /// Throws InvalidArgument when the invariants do not hold.
    void validate() const;

    /// Schedule with the training distribution centred on the data scale.
    static SigmaSchedule for_data_std(double sigma_data);
};

struct PreconditionScalars {
    double c_skip = 1.0;
    double c_out = 0.0;
    double c_in = 1.0;
    double c_noise = 0.0;
};

/// Inference grid of n_steps + 1 noise levels. The first n_steps follow the
/// rho-warped interpolation from sigma_max to sigma_min; the last entry is 0.
std::vector<double> karras_sigma_grid(int n_steps, const SigmaSchedule& sched);

/// c_skip = sd^2/(s^2+sd^2), c_out = s*sd/sqrt(s^2+sd^2), c_in = 1/sqrt(s^2+sd^2),
/// c_noise = ln(s)/4. At sigma = 0, c_noise is reported as 0 (unused).
PreconditionScalars precondition(double sigma, const SigmaSchedule& sched);

/// Loss weight lambda(sigma) = (s^2+sd^2)/(s*sd)^2; makes the implied target for
/// the raw network output unit-variance at every noise level.
double loss_weight(double sigma, const SigmaSchedule& sched);

/// Raw network call: F(c_in * x; sigma). Receives the already-scaled input.
using NetworkFn = std::function<Mat(const Mat& scaled_x, double sigma)>;

/// D(x; sigma) = c_skip x + c_out F(c_in x). Throws NumericInputError on
/// non-finite input and InvalidArgument when sigma is outside (0, sigma_max].
Mat denoise(const NetworkFn& net, const Mat& x, double sigma, const SigmaSchedule& sched);

/// (d - x) / sigma^2, elementwise.
Mat score_from_denoised(const Mat& x, const Mat& d, double sigma);

/// One sample of a noised batch: clean trajectory, additive noise, noise level.
struct NoisedBatch {
    std::vector<Mat> clean;
    std::vector<Mat> noise;
    std::vector<double> sigma;

    std::size_t size() const { return clean.size(); }
    void validate() const;
};

/// Denoiser over a single sample index of a batch; the index lets callers
/// attach per-sample conditioning.
using BatchDenoiseFn = std::function<Mat(std::size_t index, const Mat& x, double sigma)>;

/// mean_b weight(sigma_b) * ||D(y_b + n_b; sigma_b) - y_b||^2.
double dsm_loss(const BatchDenoiseFn& denoiser, const NoisedBatch& batch, const SigmaSchedule& sched);

/// Draws ln(sigma) from the logistic distribution by inverse-CDF and returns
/// exp of it, clamped to [sigma_min, sigma_max].
double sample_training_sigma(std::mt19937_64& rng, const SigmaSchedule& sched);

/// The same draw without the clamp and without exponentiation: one logistic
/// variate s with CDF 1/(1+exp(-(s-location)/scale)).
double sample_log_sigma_unclamped(std::mt19937_64& rng, const LogLogistic& dist);

}  // namespace cfgloco
