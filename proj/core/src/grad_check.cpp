#include <cfgloco/errors.hpp>
#include <cfgloco/grad_check.hpp>
#include <cfgloco/samplers.hpp>

#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cfgloco {

ModelConfig GradCheckConfig::tiny_model() {
    ModelConfig m;
    m.horizon = 4;
    m.t_cond = 2;
    m.n_layers = 2;
    m.n_heads = 2;
    m.d_model = 16;
    m.ff_mult = 2;
    return m;
}

ModelConfig GradCheckConfig::linear_model() {
    ModelConfig m = tiny_model();
    m.n_layers = 0;
    return m;
}

DsmBatch make_probe_batch(const ModelConfig& cfg, int batch, std::uint64_t seed, double mask_fraction,
                          const SigmaSchedule& sched) {
    if (batch < 1) throw InvalidArgument("probe batch must hold at least one sample");
    auto rng = detail::keyed_rng({seed, 0x6CEC});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Index t = cfg.horizon;
    DsmBatch b;
    b.clean.resize(batch * t, cfg.action_dim);
    b.noise.resize(batch * t, cfg.action_dim);
    fill_standard_normal(b.clean, rng);
    fill_standard_normal(b.noise, rng);
    for (int i = 0; i < batch; ++i) {
        const double sigma = std::exp(std::log(sched.sigma_data) + 1.5 * (2.0 * unit(rng) - 1.0));
        b.noise.middleRows(i * t, t) *= sigma;
        b.sigma.push_back(sigma);
        Conditioning c;
        c.obs_history.resize(cfg.t_cond, cfg.obs_dim);
        fill_standard_normal(c.obs_history, rng);
        c.skill = i % cfg.n_skills;
        c.sigma = sigma;
        const double r = unit(rng);
        if (unit(rng) >= mask_fraction) c.return_value = r;
        b.conds.push_back(std::move(c));
    }
    return b;
}

GradCheckReport grad_check(const DecoderNet<double>& net, const nn::ParamBuffer<double>& params,
                           const SigmaSchedule& sched, const DsmBatch& batch, double step) {
    nn::ParamBuffer<double> analytic(net.layout());
    dsm_loss_and_grad<double>(net, params, sched, batch, &analytic);

    nn::ParamBuffer<double> probe = params;
    std::map<std::string, GroupError> by_group;
    std::vector<std::string> order;
    std::map<std::string, double> max_numeric;
    for (const auto& spec : net.layout().specs()) {
        if (!by_group.count(spec.group)) {
            order.push_back(spec.group);
            by_group[spec.group].group = spec.group;
        }
        auto& g = by_group[spec.group];
        for (std::size_t k = 0; k < spec.size(); ++k) {
            const std::size_t i = spec.offset + k;
            const double orig = probe.data[i];
            probe.data[i] = orig + step;
            const double up = dsm_loss_and_grad<double>(net, probe, sched, batch, nullptr);
            probe.data[i] = orig - step;
            const double down = dsm_loss_and_grad<double>(net, probe, sched, batch, nullptr);
            probe.data[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic.data[i];
            g.n_params += 1;
            g.max_abs_analytic = std::max(g.max_abs_analytic, std::abs(a));
            g.max_abs_diff = std::max(g.max_abs_diff, std::abs(a - numeric));
            max_numeric[spec.group] = std::max(max_numeric[spec.group], std::abs(numeric));
        }
    }
    GradCheckReport report;
    for (const auto& name : order) {
        auto g = by_group[name];
        g.rel_error = g.max_abs_diff / std::max({1e-8, g.max_abs_analytic, max_numeric[name]});
        report.max_rel_error = std::max(report.max_rel_error, g.rel_error);
        report.groups.push_back(g);
    }
    return report;
}

GradCheckReport grad_check(const GradCheckConfig& cfg) {
    const DecoderNet<double> net(cfg.model);
    auto params = net.init_params(cfg.seed);
    auto rng = detail::keyed_rng({cfg.seed, 0x717});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& p : params.data) p += cfg.param_jitter * normal(rng);
    const SigmaSchedule sched;
    const DsmBatch batch = make_probe_batch(cfg.model, cfg.batch, cfg.seed, cfg.mask_fraction, sched);
    return grad_check(net, params, sched, batch, cfg.step);
}

}  // namespace cfgloco
