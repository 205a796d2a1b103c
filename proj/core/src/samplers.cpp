#include <cfgloco/errors.hpp>
#include <cfgloco/samplers.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace cfgloco {

std::string_view to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::DDPM: return "ddpm";
        case SamplerKind::DDIM: return "ddim";
        case SamplerKind::DPMPP2M: return "dpmpp2m";
    }
    return "unknown";
}

SamplerKind parse_sampler_kind(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "ddpm") return SamplerKind::DDPM;
    if (s == "ddim") return SamplerKind::DDIM;
    if (s == "dpmpp2m" || s == "dpm++2m" || s == "dpm++(2m)") return SamplerKind::DPMPP2M;
    throw InvalidArgument("unknown sampler '" + std::string(name) + "'");
}

void SamplerConfig::validate() const {
    if (n_steps < 1) throw InvalidArgument("sampler n_steps must be >= 1");
    if (kind == SamplerKind::DPMPP2M && n_steps < 2)
        throw InvalidArgument("DPM++(2M) requires n_steps >= 2");
}

void fill_standard_normal(Mat& m, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
}

namespace {

void check_finite(const Mat& x, std::size_t step) {
    if (!x.allFinite()) throw DivergedSampleError(step, "sampler produced non-finite values");
}

Mat call_denoiser(const DenoiseFn& fn, const Mat& x, double sigma, std::size_t step) {
    Mat d = fn(x, sigma);
    if (d.rows() != x.rows() || d.cols() != x.cols())
        throw InvalidArgument("denoise_fn returned a trajectory of the wrong shape");
    check_finite(d, step);
    return d;
}

// Euler step of the probability-flow ODE under sigma(t) = t.
Mat ddim(const DenoiseFn& fn, const std::vector<double>& sigmas, Mat x) {
    const std::size_t n = sigmas.size() - 1;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmas[i];
        const double s_next = sigmas[i + 1];
        Mat d = call_denoiser(fn, x, s, i);
        if (s_next == 0.0) {
            x = std::move(d);
        } else {
            x += ((s_next - s) / s) * (x - d);
        }
        check_finite(x, i);
    }
    return x;
}

Mat ddpm(const DenoiseFn& fn, const std::vector<double>& sigmas, Mat x, std::mt19937_64& rng) {
    const std::size_t n = sigmas.size() - 1;
    Mat z(x.rows(), x.cols());
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmas[i];
        const double s_next = sigmas[i + 1];
        Mat d = call_denoiser(fn, x, s, i);
        if (s_next == 0.0) {
            x = std::move(d);
            check_finite(x, i);
            continue;
        }
        const double s_up = std::min(s_next, s_next * std::sqrt((s * s - s_next * s_next) / (s * s)));
        const double s_down = std::sqrt(s_next * s_next - s_up * s_up);
        x += ((s_down - s) / s) * (x - d);
        fill_standard_normal(z, rng);
        x += s_up * z;
        check_finite(x, i);
    }
    return x;
}

// Second-order multistep in lambda = -ln(sigma), first order on the first step
// and on the final step into sigma = 0.
Mat dpmpp_2m(const DenoiseFn& fn, const std::vector<double>& sigmas, Mat x) {
    const std::size_t n = sigmas.size() - 1;
    Mat old_denoised;
    double h_last = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmas[i];
        const double s_next = sigmas[i + 1];
        Mat d = call_denoiser(fn, x, s, i);
        if (s_next == 0.0) {
            x = std::move(d);
            check_finite(x, i);
            break;
        }
        const double h = std::log(s) - std::log(s_next);
        const double ratio = s_next / s;
        const double coef = -std::expm1(-h);
        if (old_denoised.size() == 0) {
            x = ratio * x + coef * d;
        } else {
            const double r = h_last / h;
            const Mat d_corr = (1.0 + 1.0 / (2.0 * r)) * d - (1.0 / (2.0 * r)) * old_denoised;
            x = ratio * x + coef * d_corr;
        }
        check_finite(x, i);
        old_denoised = std::move(d);
        h_last = h;
    }
    return x;
}

}  // namespace

Mat sample_from(const DenoiseFn& denoise_fn, SamplerKind kind, const std::vector<double>& sigmas, Mat x,
                std::mt19937_64& rng) {
    if (sigmas.size() < 2) throw InvalidArgument("sigma grid needs at least two entries");
    switch (kind) {
        case SamplerKind::DDIM: return ddim(denoise_fn, sigmas, std::move(x));
        case SamplerKind::DDPM: return ddpm(denoise_fn, sigmas, std::move(x), rng);
        case SamplerKind::DPMPP2M: return dpmpp_2m(denoise_fn, sigmas, std::move(x));
    }
    throw InvalidArgument("unhandled sampler kind");
}

Mat sample(const DenoiseFn& denoise_fn, const SamplerConfig& cfg, const SigmaSchedule& sched, Eigen::Index rows,
           Eigen::Index cols) {
    cfg.validate();
    if (rows < 1 || cols < 1) throw InvalidArgument("sample: shape must be non-empty");
    const auto sigmas = karras_sigma_grid(cfg.n_steps, sched);
    std::mt19937_64 rng(cfg.seed);
    Mat x(rows, cols);
    fill_standard_normal(x, rng);
    x *= sched.sigma_max;
    return sample_from(denoise_fn, cfg.kind, sigmas, std::move(x), rng);
}

Mat langevin_reference(const ScoreFn& score_fn, const LangevinConfig& cfg, Mat init,
                       const LangevinObserver& observer) {
    if (!(cfg.epsilon > 0.0)) throw InvalidArgument("langevin: epsilon must be positive");
    if (cfg.n_iters < 1) throw InvalidArgument("langevin: n_iters must be positive");
    std::mt19937_64 rng(cfg.seed);
    const double half_eps = 0.5 * cfg.epsilon;
    const double noise = std::sqrt(cfg.epsilon) * cfg.noise_scale;
    Mat x = std::move(init);
    Mat z(x.rows(), x.cols());
    for (int t = 0; t < cfg.n_iters; ++t) {
        const Mat g = score_fn(x);
        fill_standard_normal(z, rng);
        x += half_eps * g + noise * z;
        if (!x.allFinite() || x.norm() > 1e6)
            throw DivergedSampleError(static_cast<std::size_t>(t), "langevin chain diverged");
        if (observer) observer(t, x);
    }
    return x;
}

}  // namespace cfgloco
