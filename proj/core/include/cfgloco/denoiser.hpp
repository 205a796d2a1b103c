#pragma once

// The conditioned network F: separate linear embeddings of the observation
// history, noise level, skill and return form the conditioning tokens; a
// pre-norm transformer decoder (causal self-attention, cross-attention into
// the conditioning, GELU MLP) maps the scaled noisy action trajectory to F.

#include <cfgloco/diffusion.hpp>
#include <cfgloco/linalg.hpp>
#include <cfgloco/nn.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cfgloco {

struct ModelConfig {
    int horizon = 8;     // T, actions predicted per sample
    int action_dim = 5;
    int obs_dim = 6;
    int t_cond = 4;      // observation history length
    int n_skills = 2;
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int ff_mult = 4;
    double mask_prob = 0.2;

    void validate() const;
    /// T_cond observation tokens + sigma + skill + return.
    int cond_tokens() const { return t_cond + 3; }

    bool operator==(const ModelConfig&) const = default;
};

/// Side input of the denoiser. `return_value` empty means MASK.
struct Conditioning {
    Mat obs_history;  // t_cond x obs_dim, already standardized
    int skill = 0;
    std::optional<double> return_value;
    double sigma = 1.0;

    /// One-hot skill vector of length n_skills.
    Vec skill_one_hot(int n_skills) const;
    /// Checks shapes against cfg and return_value in [0, 1] unless
    /// allow_out_of_range (used by the unnormalized-return probe).
    void validate(const ModelConfig& cfg, bool allow_out_of_range = false) const;
};

/// Number of noise-level features fed to the sigma embedding.
inline constexpr int kSigmaFeatures = 9;
/// [c_noise, sin(k pi c_noise), cos(k pi c_noise)] for k = 1..4.
void sigma_features(double c_noise, double* out);

template <typename S>
class DecoderNet {
public:
    explicit DecoderNet(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    const nn::ParamLayout& layout() const { return layout_; }

    /// Random initialisation; the return projection starts at zero so that the
    /// return token equals the mask embedding until returns are observed.
    nn::ParamBuffer<S> init_params(std::uint64_t seed) const;

    struct CondInputs {
        MatT<S> obs;            // B*t_cond x obs_dim
        MatT<S> sigma_feats;    // B x kSigmaFeatures
        MatT<S> skill;          // B x n_skills
        std::vector<std::optional<S>> ret;  // B entries
        Eigen::Index batch() const { return sigma_feats.rows(); }
    };

    /// Builds embedding inputs for a batch of conditionings. `sigma_override`
    /// replaces every cond.sigma when set.
    CondInputs make_cond_inputs(std::span<const Conditioning> conds, std::optional<double> sigma_override = {},
                                bool allow_out_of_range = false) const;

    /// Conditioning tokens, (B * cond_tokens) x d_model.
    MatT<S> embed(const nn::ParamBuffer<S>& p, const CondInputs& in) const;
    void embed_backward(const nn::ParamBuffer<S>& p, const CondInputs& in, const MatT<S>& d_tokens,
                        nn::ParamBuffer<S>& grad) const;

    struct Cache;

    /// F for scaled noisy actions (B*T x action_dim) given conditioning tokens.
    MatT<S> forward(const nn::ParamBuffer<S>& p, const MatT<S>& scaled_actions, const MatT<S>& cond_tokens,
                    Cache* cache = nullptr) const;
    /// Accumulates parameter gradients; returns d(cond_tokens).
    MatT<S> backward(const nn::ParamBuffer<S>& p, const Cache& cache, const MatT<S>& d_out,
                     nn::ParamBuffer<S>& grad) const;

    struct LayerIndex {
        std::size_t ln1_g, ln1_b, qkv_w, qkv_b, self_o_w, self_o_b;
        std::size_t ln2_g, ln2_b, cq_w, cq_b, ckv_w, ckv_b, cross_o_w, cross_o_b;
        std::size_t ln3_g, ln3_b, ff1_w, ff1_b, ff2_w, ff2_b;
    };

    struct LayerCache {
        MatT<S> ln1_out, q, k, v, attn, ln2_out, cq, ck, cv, cattn, ln3_out, ff_pre, ff_act;
        nn::LayerNormCache<S> ln1, ln2, ln3;
        nn::AttentionCache<S> self_attn, cross_attn;
    };

    struct Cache {
        Eigen::Index batch = 0;
        MatT<S> input;
        MatT<S> cond_tokens;
        std::vector<LayerCache> layers;
        nn::LayerNormCache<S> ln_f;
        MatT<S> head_in;
    };

private:
    Eigen::Map<const MatT<S>> w(const nn::ParamBuffer<S>& p, std::size_t idx) const { return p.view(layout_[idx]); }
    Eigen::Map<MatT<S>> g(nn::ParamBuffer<S>& p, std::size_t idx) const { return p.view(layout_[idx]); }

    ModelConfig cfg_;
    nn::ParamLayout layout_;
    std::size_t act_w_, act_b_, act_pos_;
    std::size_t obs_w_, obs_b_, obs_pos_;
    std::size_t sig_w_, sig_b_;
    std::size_t skill_w_, skill_b_;
    std::size_t ret_w_, ret_b_, ret_mask_;
    std::vector<LayerIndex> layer_idx_;
    std::size_t lnf_g_ = 0, lnf_b_ = 0;
    std::size_t head_w_, head_b_;
};

/// Network + preconditioning evaluated at one noise level for a row-stacked
/// batch: x is (B*T x action_dim), conds has B entries.
/// D = c_skip x + c_out F(c_in x; c_noise, cond).
template <typename S>
Mat denoise_batch(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const SigmaSchedule& sched,
                  const Mat& x, double sigma, std::span<const Conditioning> conds, bool allow_out_of_range = false);

/// Single-trajectory convenience form of denoise_batch.
template <typename S>
Mat denoise(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const SigmaSchedule& sched,
            const ActionTrajectory& x, double sigma, const Conditioning& cond);

/// Conditioning tokens ((t_cond + 3) x d_model) for one conditioning.
template <typename S>
Mat embed_conditioning(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const Conditioning& cond);

/// Raw F for one trajectory given its conditioning tokens.
template <typename S>
Mat forward(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const ActionTrajectory& noised_actions,
            const Mat& cond_tokens);

}  // namespace cfgloco
