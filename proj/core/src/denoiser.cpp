#include <cfgloco/denoiser.hpp>
#include <cfgloco/errors.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace cfgloco {

void ModelConfig::validate() const {
    if (horizon < 1) throw InvalidArgument("model: horizon must be >= 1");
    if (action_dim < 1 || obs_dim < 1) throw InvalidArgument("model: action_dim and obs_dim must be positive");
    if (t_cond < 1) throw InvalidArgument("model: t_cond must be >= 1");
    if (n_skills < 1) throw InvalidArgument("model: n_skills must be >= 1");
    if (n_layers < 0) throw InvalidArgument("model: n_layers must be >= 0");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw InvalidArgument("model: d_model must be divisible by n_heads");
    if (ff_mult < 1) throw InvalidArgument("model: ff_mult must be >= 1");
    if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
        throw InvalidArgument("model: mask_prob must lie in [0, 1]");
}

Vec Conditioning::skill_one_hot(int n_skills) const {
    Vec v = Vec::Zero(n_skills);
    v(skill) = 1.0;
    return v;
}

void Conditioning::validate(const ModelConfig& cfg, bool allow_out_of_range) const {
    if (obs_history.rows() != cfg.t_cond || obs_history.cols() != cfg.obs_dim)
        throw InvalidArgument("conditioning: observation history must be t_cond x obs_dim");
    if (!obs_history.allFinite()) throw NumericInputError("conditioning: non-finite observation history");
    if (skill < 0 || skill >= cfg.n_skills) throw InvalidArgument("conditioning: skill index out of range");
    if (return_value) {
        if (!std::isfinite(*return_value)) throw NumericInputError("conditioning: non-finite return");
        if (!allow_out_of_range && (*return_value < 0.0 || *return_value > 1.0))
            throw InvalidArgument("conditioning: return must lie in [0, 1] or be MASK");
    }
}

void sigma_features(double c_noise, double* out) {
    out[0] = c_noise;
    for (int k = 1; k <= 4; ++k) {
        out[2 * k - 1] = std::sin(k * std::numbers::pi * c_noise);
        out[2 * k] = std::cos(k * std::numbers::pi * c_noise);
    }
}

template <typename S>
DecoderNet<S>::DecoderNet(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const Eigen::Index d = cfg_.d_model;
    act_w_ = layout_.add("embed.action.w", "embed.action", cfg_.action_dim, d);
    act_b_ = layout_.add("embed.action.b", "embed.action", 1, d);
    act_pos_ = layout_.add("embed.action.pos", "embed.action", cfg_.horizon, d);
    obs_w_ = layout_.add("embed.obs.w", "embed.obs", cfg_.obs_dim, d);
    obs_b_ = layout_.add("embed.obs.b", "embed.obs", 1, d);
    obs_pos_ = layout_.add("embed.obs.pos", "embed.obs", cfg_.t_cond, d);
    sig_w_ = layout_.add("embed.sigma.w", "embed.sigma", kSigmaFeatures, d);
    sig_b_ = layout_.add("embed.sigma.b", "embed.sigma", 1, d);
    skill_w_ = layout_.add("embed.skill.w", "embed.skill", cfg_.n_skills, d);
    skill_b_ = layout_.add("embed.skill.b", "embed.skill", 1, d);
    ret_w_ = layout_.add("embed.return.w", "embed.return", 1, d);
    ret_b_ = layout_.add("embed.return.b", "embed.return", 1, d);
    ret_mask_ = layout_.add("embed.return.mask", "embed.return", 1, d);

    const Eigen::Index ff = static_cast<Eigen::Index>(cfg_.ff_mult) * d;
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l);
        LayerIndex li{};
        li.ln1_g = layout_.add(p + ".ln1.g", p + ".self_attn", 1, d);
        li.ln1_b = layout_.add(p + ".ln1.b", p + ".self_attn", 1, d);
        li.qkv_w = layout_.add(p + ".self.qkv.w", p + ".self_attn", d, 3 * d);
        li.qkv_b = layout_.add(p + ".self.qkv.b", p + ".self_attn", 1, 3 * d);
        li.self_o_w = layout_.add(p + ".self.out.w", p + ".self_attn", d, d);
        li.self_o_b = layout_.add(p + ".self.out.b", p + ".self_attn", 1, d);
        li.ln2_g = layout_.add(p + ".ln2.g", p + ".cross_attn", 1, d);
        li.ln2_b = layout_.add(p + ".ln2.b", p + ".cross_attn", 1, d);
        li.cq_w = layout_.add(p + ".cross.q.w", p + ".cross_attn", d, d);
        li.cq_b = layout_.add(p + ".cross.q.b", p + ".cross_attn", 1, d);
        li.ckv_w = layout_.add(p + ".cross.kv.w", p + ".cross_attn", d, 2 * d);
        li.ckv_b = layout_.add(p + ".cross.kv.b", p + ".cross_attn", 1, 2 * d);
        li.cross_o_w = layout_.add(p + ".cross.out.w", p + ".cross_attn", d, d);
        li.cross_o_b = layout_.add(p + ".cross.out.b", p + ".cross_attn", 1, d);
        li.ln3_g = layout_.add(p + ".ln3.g", p + ".mlp", 1, d);
        li.ln3_b = layout_.add(p + ".ln3.b", p + ".mlp", 1, d);
        li.ff1_w = layout_.add(p + ".ff1.w", p + ".mlp", d, ff);
        li.ff1_b = layout_.add(p + ".ff1.b", p + ".mlp", 1, ff);
        li.ff2_w = layout_.add(p + ".ff2.w", p + ".mlp", ff, d);
        li.ff2_b = layout_.add(p + ".ff2.b", p + ".mlp", 1, d);
        layer_idx_.push_back(li);
    }
    if (cfg_.n_layers > 0) {
        lnf_g_ = layout_.add("final_ln.g", "head", 1, d);
        lnf_b_ = layout_.add("final_ln.b", "head", 1, d);
    }
    head_w_ = layout_.add("head.w", "head", d, cfg_.action_dim);
    head_b_ = layout_.add("head.b", "head", 1, cfg_.action_dim);
}

template <typename S>
nn::ParamBuffer<S> DecoderNet<S>::init_params(std::uint64_t seed) const {
    nn::ParamBuffer<S> p(layout_);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fill = [&](std::size_t idx, double stddev) {
        auto m = p.view(layout_[idx]);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(stddev * normal(rng));
    };
    auto ones = [&](std::size_t idx) { p.view(layout_[idx]).setOnes(); };

    const double d = cfg_.d_model;
    const double ff = cfg_.ff_mult * d;
    const double depth = 1.0 / std::sqrt(2.0 * std::max(1, cfg_.n_layers));
    fill(act_w_, 1.0 / std::sqrt(cfg_.action_dim));
    fill(act_pos_, 0.1);
    fill(obs_w_, 1.0 / std::sqrt(cfg_.obs_dim));
    fill(obs_pos_, 0.1);
    fill(sig_w_, 1.0 / std::sqrt(static_cast<double>(kSigmaFeatures)));
    fill(skill_w_, 0.5);
    fill(ret_mask_, 0.5);
    for (const auto& li : layer_idx_) {
        ones(li.ln1_g);
        ones(li.ln2_g);
        ones(li.ln3_g);
        fill(li.qkv_w, 1.0 / std::sqrt(d));
        fill(li.self_o_w, depth / std::sqrt(d));
        fill(li.cq_w, 1.0 / std::sqrt(d));
        fill(li.ckv_w, 1.0 / std::sqrt(d));
        fill(li.cross_o_w, depth / std::sqrt(d));
        fill(li.ff1_w, 1.0 / std::sqrt(d));
        fill(li.ff2_w, depth / std::sqrt(ff));
    }
    if (cfg_.n_layers > 0) ones(lnf_g_);
    fill(head_w_, 0.1 / std::sqrt(d));
    return p;
}

template <typename S>
typename DecoderNet<S>::CondInputs DecoderNet<S>::make_cond_inputs(std::span<const Conditioning> conds,
                                                                   std::optional<double> sigma_override,
                                                                   bool allow_out_of_range) const {
    const auto b = static_cast<Eigen::Index>(conds.size());
    CondInputs in;
    in.obs.resize(b * cfg_.t_cond, cfg_.obs_dim);
    in.sigma_feats.resize(b, kSigmaFeatures);
    in.skill.setZero(b, cfg_.n_skills);
    in.ret.resize(conds.size());
    double feats[kSigmaFeatures];
    for (Eigen::Index i = 0; i < b; ++i) {
        const auto& c = conds[static_cast<std::size_t>(i)];
        c.validate(cfg_, allow_out_of_range);
        const double sigma = sigma_override.value_or(c.sigma);
        if (!(sigma > 0.0)) throw InvalidArgument("conditioning: sigma must be positive");
        in.obs.block(i * cfg_.t_cond, 0, cfg_.t_cond, cfg_.obs_dim) = c.obs_history.template cast<S>();
        sigma_features(0.25 * std::log(sigma), feats);
        for (int k = 0; k < kSigmaFeatures; ++k) in.sigma_feats(i, k) = static_cast<S>(feats[k]);
        in.skill(i, c.skill) = S(1);
        if (c.return_value) in.ret[static_cast<std::size_t>(i)] = static_cast<S>(*c.return_value);
    }
    return in;
}

template <typename S>
MatT<S> DecoderNet<S>::embed(const nn::ParamBuffer<S>& p, const CondInputs& in) const {
    const Eigen::Index b = in.batch();
    const Eigen::Index tc = cfg_.cond_tokens();
    MatT<S> tokens(b * tc, cfg_.d_model);
    const MatT<S> obs_tok = nn::linear_forward<S>(in.obs, w(p, obs_w_), w(p, obs_b_));
    const MatT<S> sig_tok = nn::linear_forward<S>(in.sigma_feats, w(p, sig_w_), w(p, sig_b_));
    const MatT<S> skill_tok = nn::linear_forward<S>(in.skill, w(p, skill_w_), w(p, skill_b_));
    const auto pos = w(p, obs_pos_);
    const auto mask = w(p, ret_mask_);
    for (Eigen::Index i = 0; i < b; ++i) {
        tokens.block(i * tc, 0, cfg_.t_cond, cfg_.d_model) =
            obs_tok.block(i * cfg_.t_cond, 0, cfg_.t_cond, cfg_.d_model) + pos;
        tokens.row(i * tc + cfg_.t_cond) = sig_tok.row(i);
        tokens.row(i * tc + cfg_.t_cond + 1) = skill_tok.row(i);
        const auto& r = in.ret[static_cast<std::size_t>(i)];
        if (r) {
            tokens.row(i * tc + cfg_.t_cond + 2) = mask.row(0) + (*r * w(p, ret_w_).row(0) + w(p, ret_b_).row(0));
        } else {
            tokens.row(i * tc + cfg_.t_cond + 2) = mask.row(0);
        }
    }
    return tokens;
}

template <typename S>
void DecoderNet<S>::embed_backward(const nn::ParamBuffer<S>& p, const CondInputs& in, const MatT<S>& d_tokens,
                                   nn::ParamBuffer<S>& grad) const {
    const Eigen::Index b = in.batch();
    const Eigen::Index tc = cfg_.cond_tokens();
    const Eigen::Index d = cfg_.d_model;
    MatT<S> d_obs(b * cfg_.t_cond, d);
    MatT<S> d_sig(b, d);
    MatT<S> d_skill(b, d);
    auto g_pos = g(grad, obs_pos_);
    auto g_mask = g(grad, ret_mask_);
    auto g_rw = g(grad, ret_w_);
    auto g_rb = g(grad, ret_b_);
    for (Eigen::Index i = 0; i < b; ++i) {
        const auto block = d_tokens.block(i * tc, 0, cfg_.t_cond, d);
        d_obs.block(i * cfg_.t_cond, 0, cfg_.t_cond, d) = block;
        g_pos += block;
        d_sig.row(i) = d_tokens.row(i * tc + cfg_.t_cond);
        d_skill.row(i) = d_tokens.row(i * tc + cfg_.t_cond + 1);
        const auto d_ret = d_tokens.row(i * tc + cfg_.t_cond + 2);
        g_mask.row(0) += d_ret;
        const auto& r = in.ret[static_cast<std::size_t>(i)];
        if (r) {
            g_rw.row(0) += *r * d_ret;
            g_rb.row(0) += d_ret;
        }
    }
    nn::linear_backward<S>(in.obs, w(p, obs_w_), d_obs, g(grad, obs_w_), g(grad, obs_b_), false);
    nn::linear_backward<S>(in.sigma_feats, w(p, sig_w_), d_sig, g(grad, sig_w_), g(grad, sig_b_), false);
    nn::linear_backward<S>(in.skill, w(p, skill_w_), d_skill, g(grad, skill_w_), g(grad, skill_b_), false);
}

template <typename S>
MatT<S> DecoderNet<S>::forward(const nn::ParamBuffer<S>& p, const MatT<S>& x, const MatT<S>& cond,
                               Cache* cache) const {
    const Eigen::Index t = cfg_.horizon;
    const Eigen::Index d = cfg_.d_model;
    const Eigen::Index tc = cfg_.cond_tokens();
    if (x.cols() != cfg_.action_dim || x.rows() % t != 0)
        throw InvalidArgument("forward: noised actions must be (B*T) x action_dim");
    const Eigen::Index b = x.rows() / t;
    if (cond.rows() != b * tc || cond.cols() != d)
        throw InvalidArgument("forward: conditioning tokens do not match the batch");

    MatT<S> h = nn::linear_forward<S>(x, w(p, act_w_), w(p, act_b_));
    const auto pos = w(p, act_pos_);
    for (Eigen::Index i = 0; i < b; ++i) h.block(i * t, 0, t, d) += pos;

    if (cache) {
        cache->batch = b;
        cache->input = x;
        cache->cond_tokens = cond;
        cache->layers.assign(layer_idx_.size(), LayerCache{});
    }
    const nn::AttentionShape self_shape{b, t, t, cfg_.n_heads, true};
    const nn::AttentionShape cross_shape{b, t, tc, cfg_.n_heads, false};

    for (std::size_t l = 0; l < layer_idx_.size(); ++l) {
        const auto& li = layer_idx_[l];
        LayerCache local;
        LayerCache& c = cache ? cache->layers[l] : local;

        c.ln1_out = nn::layernorm_forward<S>(h, w(p, li.ln1_g), w(p, li.ln1_b), &c.ln1);
        const MatT<S> qkv = nn::linear_forward<S>(c.ln1_out, w(p, li.qkv_w), w(p, li.qkv_b));
        c.q = qkv.leftCols(d);
        c.k = qkv.middleCols(d, d);
        c.v = qkv.rightCols(d);
        c.attn = nn::attention_forward<S>(c.q, c.k, c.v, self_shape, &c.self_attn);
        h += nn::linear_forward<S>(c.attn, w(p, li.self_o_w), w(p, li.self_o_b));

        c.ln2_out = nn::layernorm_forward<S>(h, w(p, li.ln2_g), w(p, li.ln2_b), &c.ln2);
        c.cq = nn::linear_forward<S>(c.ln2_out, w(p, li.cq_w), w(p, li.cq_b));
        const MatT<S> kv = nn::linear_forward<S>(cond, w(p, li.ckv_w), w(p, li.ckv_b));
        c.ck = kv.leftCols(d);
        c.cv = kv.rightCols(d);
        c.cattn = nn::attention_forward<S>(c.cq, c.ck, c.cv, cross_shape, &c.cross_attn);
        h += nn::linear_forward<S>(c.cattn, w(p, li.cross_o_w), w(p, li.cross_o_b));

        c.ln3_out = nn::layernorm_forward<S>(h, w(p, li.ln3_g), w(p, li.ln3_b), &c.ln3);
        c.ff_pre = nn::linear_forward<S>(c.ln3_out, w(p, li.ff1_w), w(p, li.ff1_b));
        c.ff_act = nn::gelu_forward<S>(c.ff_pre);
        h += nn::linear_forward<S>(c.ff_act, w(p, li.ff2_w), w(p, li.ff2_b));
    }

    MatT<S> head_in;
    if (cfg_.n_layers > 0) {
        head_in = nn::layernorm_forward<S>(h, w(p, lnf_g_), w(p, lnf_b_), cache ? &cache->ln_f : nullptr);
    } else {
        head_in = std::move(h);
    }
    MatT<S> out = nn::linear_forward<S>(head_in, w(p, head_w_), w(p, head_b_));
    if (cache) cache->head_in = std::move(head_in);
    return out;
}

template <typename S>
MatT<S> DecoderNet<S>::backward(const nn::ParamBuffer<S>& p, const Cache& cache, const MatT<S>& d_out,
                                nn::ParamBuffer<S>& grad) const {
    const Eigen::Index t = cfg_.horizon;
    const Eigen::Index d = cfg_.d_model;
    const Eigen::Index tc = cfg_.cond_tokens();
    const Eigen::Index b = cache.batch;

    MatT<S> dh = nn::linear_backward<S>(cache.head_in, w(p, head_w_), d_out, g(grad, head_w_), g(grad, head_b_));
    if (cfg_.n_layers > 0) dh = nn::layernorm_backward<S>(cache.ln_f, w(p, lnf_g_), dh, g(grad, lnf_g_), g(grad, lnf_b_));

    MatT<S> d_cond = MatT<S>::Zero(b * tc, d);
    const nn::AttentionShape self_shape{b, t, t, cfg_.n_heads, true};
    const nn::AttentionShape cross_shape{b, t, tc, cfg_.n_heads, false};
    MatT<S> dq, dk, dv;

    for (std::size_t l = layer_idx_.size(); l-- > 0;) {
        const auto& li = layer_idx_[l];
        const LayerCache& c = cache.layers[l];

        const MatT<S> d_act = nn::linear_backward<S>(c.ff_act, w(p, li.ff2_w), dh, g(grad, li.ff2_w), g(grad, li.ff2_b));
        const MatT<S> d_pre = nn::gelu_backward<S>(c.ff_pre, d_act);
        const MatT<S> d_ln3 = nn::linear_backward<S>(c.ln3_out, w(p, li.ff1_w), d_pre, g(grad, li.ff1_w), g(grad, li.ff1_b));
        dh += nn::layernorm_backward<S>(c.ln3, w(p, li.ln3_g), d_ln3, g(grad, li.ln3_g), g(grad, li.ln3_b));

        const MatT<S> d_cattn =
            nn::linear_backward<S>(c.cattn, w(p, li.cross_o_w), dh, g(grad, li.cross_o_w), g(grad, li.cross_o_b));
        nn::attention_backward<S>(c.cq, c.ck, c.cv, cross_shape, c.cross_attn, d_cattn, dq, dk, dv);
        const MatT<S> d_ln2 = nn::linear_backward<S>(c.ln2_out, w(p, li.cq_w), dq, g(grad, li.cq_w), g(grad, li.cq_b));
        MatT<S> dkv(dk.rows(), 2 * d);
        dkv << dk, dv;
        d_cond += nn::linear_backward<S>(cache.cond_tokens, w(p, li.ckv_w), dkv, g(grad, li.ckv_w), g(grad, li.ckv_b));
        dh += nn::layernorm_backward<S>(c.ln2, w(p, li.ln2_g), d_ln2, g(grad, li.ln2_g), g(grad, li.ln2_b));

        const MatT<S> d_attn =
            nn::linear_backward<S>(c.attn, w(p, li.self_o_w), dh, g(grad, li.self_o_w), g(grad, li.self_o_b));
        nn::attention_backward<S>(c.q, c.k, c.v, self_shape, c.self_attn, d_attn, dq, dk, dv);
        MatT<S> dqkv(dq.rows(), 3 * d);
        dqkv << dq, dk, dv;
        const MatT<S> d_ln1 = nn::linear_backward<S>(c.ln1_out, w(p, li.qkv_w), dqkv, g(grad, li.qkv_w), g(grad, li.qkv_b));
        dh += nn::layernorm_backward<S>(c.ln1, w(p, li.ln1_g), d_ln1, g(grad, li.ln1_g), g(grad, li.ln1_b));
    }

    nn::linear_backward<S>(cache.input, w(p, act_w_), dh, g(grad, act_w_), g(grad, act_b_), false);
    auto g_pos = g(grad, act_pos_);
    for (Eigen::Index i = 0; i < b; ++i) g_pos += dh.block(i * t, 0, t, d);
    return d_cond;
}

template <typename S>
Mat denoise_batch(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const SigmaSchedule& sched,
                  const Mat& x, double sigma, std::span<const Conditioning> conds, bool allow_out_of_range) {
    const auto& cfg = net.config();
    if (!x.allFinite()) throw NumericInputError("denoise: non-finite input trajectory");
    if (!(sigma > 0.0) || sigma > sched.sigma_max) throw InvalidArgument("denoise: sigma must lie in (0, sigma_max]");
    if (conds.empty() || x.cols() != cfg.action_dim ||
        x.rows() != static_cast<Eigen::Index>(conds.size()) * cfg.horizon)
        throw InvalidArgument("denoise: trajectory batch does not match conditioning batch");
    const auto pc = precondition(sigma, sched);
    const auto in = net.make_cond_inputs(conds, sigma, allow_out_of_range);
    const MatT<S> tokens = net.embed(params, in);
    const MatT<S> scaled = (pc.c_in * x).template cast<S>();
    const MatT<S> f = net.forward(params, scaled, tokens);
    return pc.c_skip * x + pc.c_out * f.template cast<double>();
}

template <typename S>
Mat denoise(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const SigmaSchedule& sched,
            const ActionTrajectory& x, double sigma, const Conditioning& cond) {
    return denoise_batch<S>(net, params, sched, x, sigma, std::span<const Conditioning>(&cond, 1));
}

template <typename S>
Mat embed_conditioning(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const Conditioning& cond) {
    const auto in = net.make_cond_inputs(std::span<const Conditioning>(&cond, 1));
    return net.embed(params, in).template cast<double>();
}

template <typename S>
Mat forward(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const ActionTrajectory& noised_actions,
            const Mat& cond_tokens) {
    return net.forward(params, noised_actions.template cast<S>(), cond_tokens.template cast<S>())
        .template cast<double>();
}

template class DecoderNet<float>;
template class DecoderNet<double>;

#define CFGLOCO_DENOISER_INSTANTIATE(S)                                                                       \
    template Mat denoise_batch<S>(const DecoderNet<S>&, const nn::ParamBuffer<S>&, const SigmaSchedule&,     \
                                  const Mat&, double, std::span<const Conditioning>, bool);                  \
    template Mat denoise<S>(const DecoderNet<S>&, const nn::ParamBuffer<S>&, const SigmaSchedule&,           \
                            const ActionTrajectory&, double, const Conditioning&);                           \
    template Mat embed_conditioning<S>(const DecoderNet<S>&, const nn::ParamBuffer<S>&, const Conditioning&); \
    template Mat forward<S>(const DecoderNet<S>&, const nn::ParamBuffer<S>&, const ActionTrajectory&, const Mat&);

CFGLOCO_DENOISER_INSTANTIATE(float)
CFGLOCO_DENOISER_INSTANTIATE(double)

#undef CFGLOCO_DENOISER_INSTANTIATE

}  // namespace cfgloco
