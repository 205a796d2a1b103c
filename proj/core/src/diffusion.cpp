#include <cfgloco/diffusion.hpp>
#include <cfgloco/errors.hpp>

#include <algorithm>
#include <cmath>

namespace cfgloco {

void SigmaSchedule::validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw InvalidArgument("sigma schedule requires 0 < sigma_min < sigma_max");
    if (!(sigma_data > 0.0)) throw InvalidArgument("sigma_data must be positive");
    if (!(rho > 0.0)) throw InvalidArgument("rho must be positive");
    if (!(train_dist.scale >= 0.0)) throw InvalidArgument("log-logistic scale must be non-negative");
}

SigmaSchedule SigmaSchedule::for_data_std(double sigma_data) {
    SigmaSchedule s;
    s.sigma_data = sigma_data;
    s.train_dist.location = std::log(sigma_data);
    s.train_dist.scale = 0.5;
    return s;
}

std::vector<double> karras_sigma_grid(int n_steps, const SigmaSchedule& sched) {
    if (n_steps < 1) throw InvalidArgument("karras_sigma_grid: n_steps must be >= 1");
    sched.validate();

    std::vector<double> sigmas;
    sigmas.reserve(static_cast<std::size_t>(n_steps) + 1);
    if (n_steps == 1) {
        sigmas.push_back(sched.sigma_max);
        sigmas.push_back(0.0);
        return sigmas;
    }
    const double inv_rho = 1.0 / sched.rho;
    const double max_inv = std::pow(sched.sigma_max, inv_rho);
    const double min_inv = std::pow(sched.sigma_min, inv_rho);
    for (int i = 0; i < n_steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n_steps - 1);
        sigmas.push_back(std::pow(max_inv + t * (min_inv - max_inv), sched.rho));
    }
    // pin the endpoints exactly; pow round trips are not exact
    sigmas.front() = sched.sigma_max;
    sigmas[static_cast<std::size_t>(n_steps) - 1] = sched.sigma_min;
    sigmas.push_back(0.0);
    return sigmas;
}

PreconditionScalars precondition(double sigma, const SigmaSchedule& sched) {
    const double sd = sched.sigma_data;
    const double s2 = sigma * sigma;
    const double sd2 = sd * sd;
    const double norm = std::sqrt(s2 + sd2);
    PreconditionScalars p;
    p.c_skip = sd2 / (s2 + sd2);
    p.c_out = sigma * sd / norm;
    p.c_in = 1.0 / norm;
    p.c_noise = sigma > 0.0 ? 0.25 * std::log(sigma) : 0.0;
    return p;
}

double loss_weight(double sigma, const SigmaSchedule& sched) {
    const double sd = sched.sigma_data;
    return (sigma * sigma + sd * sd) / ((sigma * sd) * (sigma * sd));
}

Mat denoise(const NetworkFn& net, const Mat& x, double sigma, const SigmaSchedule& sched) {
    if (!x.allFinite()) throw NumericInputError("denoise: non-finite input trajectory");
    if (!(sigma > 0.0) || sigma > sched.sigma_max)
        throw InvalidArgument("denoise: sigma must lie in (0, sigma_max]");
    const auto p = precondition(sigma, sched);
    const Mat f = net(p.c_in * x, sigma);
    if (f.rows() != x.rows() || f.cols() != x.cols())
        throw InvalidArgument("denoise: network output shape mismatch");
    return p.c_skip * x + p.c_out * f;
}

Mat score_from_denoised(const Mat& x, const Mat& d, double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("score_from_denoised: sigma must be positive");
    return (d - x) / (sigma * sigma);
}

void NoisedBatch::validate() const {
    if (clean.empty()) throw InvalidArgument("noised batch is empty");
    if (noise.size() != clean.size() || sigma.size() != clean.size())
        throw InvalidArgument("noised batch: clean/noise/sigma lengths differ");
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (clean[i].rows() != noise[i].rows() || clean[i].cols() != noise[i].cols())
            throw InvalidArgument("noised batch: clean and noise shapes differ");
        if (!(sigma[i] > 0.0)) throw InvalidArgument("noised batch: sigma must be positive");
    }
}

double dsm_loss(const BatchDenoiseFn& denoiser, const NoisedBatch& batch, const SigmaSchedule& sched) {
    batch.validate();
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Mat noised = batch.clean[i] + batch.noise[i];
        const Mat d = denoiser(i, noised, batch.sigma[i]);
        total += loss_weight(batch.sigma[i], sched) * (d - batch.clean[i]).squaredNorm();
    }
    return total / static_cast<double>(batch.size());
}

double sample_log_sigma_unclamped(std::mt19937_64& rng, const LogLogistic& dist) {
    // inverse CDF of the logistic distribution; u must avoid {0, 1}
    double u = 0.0;
    do {
        u = std::generate_canonical<double, 53>(rng);
    } while (u <= 0.0 || u >= 1.0);
    if (dist.scale == 0.0) return dist.location;
    return dist.location + dist.scale * std::log(u / (1.0 - u));
}

double sample_training_sigma(std::mt19937_64& rng, const SigmaSchedule& sched) {
    const double s = sample_log_sigma_unclamped(rng, sched.train_dist);
    return std::clamp(std::exp(s), sched.sigma_min, sched.sigma_max);
}

}  // namespace cfgloco
