#include <cfgloco/errors.hpp>
#include <cfgloco/guidance.hpp>

#include <algorithm>
#include <cmath>

namespace cfgloco {

void GuidanceConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("guidance: lambda must be >= 0");
    if (!std::isfinite(target_return)) throw InvalidArgument("guidance: target return must be finite");
}

double GuidanceConfig::effective_target() const {
    return allow_out_of_range ? target_return : std::clamp(target_return, 0.0, 1.0);
}

Mat combine_guidance(const Mat& d_uncond, const Mat& d_cond, double lambda) {
    if (d_uncond.rows() != d_cond.rows() || d_uncond.cols() != d_cond.cols())
        throw InvalidArgument("guidance: branch outputs differ in shape");
    if (lambda == 0.0) return d_uncond;
    if (lambda == 1.0) return d_cond;
    return (1.0 - lambda) * d_uncond + lambda * d_cond;
}

Mat cfg_denoise(const DenoiseFn& uncond, const DenoiseFn& cond, const Mat& x, double sigma,
                const GuidanceConfig& g) {
    g.validate();
    return combine_guidance(uncond(x, sigma), cond(x, sigma), g.lambda);
}

GuidedDenoiser::GuidedDenoiser(const TrainedModel& model, const DecoderNet<float>& net,
                               std::vector<Conditioning> conds, GuidanceConfig g)
    : model_(model), net_(net), uncond_(conds), cond_(std::move(conds)), g_(g) {
    g_.validate();
    for (auto& c : uncond_) c.return_value.reset();
    for (auto& c : cond_) c.return_value = g_.effective_target();
    if (model.model.mask_prob == 0.0)
        warnings_.push_back(
            "guidance: model was trained with mask_prob = 0, so the unconditional branch was never trained");
}

Mat GuidedDenoiser::unconditional(const Mat& x, double sigma) {
    ++calls_;
    return denoise_batch<float>(net_, model_.params, model_.sched, x, sigma, uncond_);
}

Mat GuidedDenoiser::conditional(const Mat& x, double sigma) {
    ++calls_;
    return denoise_batch<float>(net_, model_.params, model_.sched, x, sigma, cond_, g_.allow_out_of_range);
}

Mat GuidedDenoiser::operator()(const Mat& x, double sigma) {
    const Mat u = unconditional(x, sigma);
    const Mat c = conditional(x, sigma);
    return combine_guidance(u, c, g_.lambda);
}

GuidedSample guided_sampler(const TrainedModel& model, const DecoderNet<float>& net, const SamplerConfig& sampler,
                            const GuidanceConfig& g, std::span<const Conditioning> conds) {
    sampler.validate();
    GuidedDenoiser d(model, net, std::vector<Conditioning>(conds.begin(), conds.end()), g);
    const Eigen::Index rows = static_cast<Eigen::Index>(conds.size()) * model.model.horizon;
    const Mat x = sample([&](const Mat& xi, double s) { return d(xi, s); }, sampler, model.sched, rows,
                         model.model.action_dim);
    GuidedSample out;
    out.actions = model.norm.denormalize_actions(x);
    out.denoiser_calls = d.calls();
    out.warnings = d.warnings();
    return out;
}

}  // namespace cfgloco
