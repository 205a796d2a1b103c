#pragma once

// Training of the conditioned denoiser: per-dimension normalisation, sliding
// windows over the dataset, the DSM loss with its analytic gradient, Adam with
// cosine decay and global-norm clipping, and return masking.

#include <cfgloco/dataset.hpp>
#include <cfgloco/denoiser.hpp>
#include <cfgloco/diffusion.hpp>
#include <cfgloco/nn.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cfgloco {

struct NormStats {
    Vec obs_mean, obs_std;
    Vec act_mean, act_std;

    static NormStats from_dataset(const Dataset& ds);
    Mat normalize_obs(const Mat& obs) const;
    Mat normalize_actions(const Mat& actions) const;
    Mat denormalize_actions(const Mat& actions) const;
};

struct TrainConfig {
    int epochs = 8;
    int batch_size = 256;
    double lr = 3e-4;
    std::uint64_t seed = 0;
    double grad_clip = 1.0;
    /// 0 means one full pass over the windows per epoch.
    int steps_per_epoch = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

/// Dataset windows in normalised units. A window starting at record t holds
/// actions t..t+T-1 of one episode; its observation history ends at t and
/// repeats the first observation of the episode where it would reach past it.
class TrainingSet {
public:
    TrainingSet(const Dataset& ds, const ModelConfig& cfg, const NormStats& norm);

    std::size_t size() const { return starts_.size(); }
    std::size_t start(std::size_t window) const { return starts_[window]; }
    Mat obs_history(std::size_t record) const;
    Mat action_window(std::size_t record) const;
    int skill(std::size_t record) const { return skill_[record]; }
    double scaled_return(std::size_t record) const { return ret_[record]; }
    /// Mean over action dimensions of the normalised-action std.
    double action_std() const;

private:
    ModelConfig cfg_;
    Mat obs_;
    Mat act_;
    std::vector<std::size_t> starts_;
    std::vector<std::size_t> episode_start_;
    std::vector<int> skill_;
    std::vector<double> ret_;
};

/// Noised minibatch with its conditioning; clean/noise are (B*T) x action_dim.
struct DsmBatch {
    Mat clean;
    Mat noise;
    std::vector<double> sigma;
    std::vector<Conditioning> conds;
};

/// DSM loss of the network on a batch; accumulates d(loss)/d(params) into
/// `grad` when given.
template <typename S>
double dsm_loss_and_grad(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const SigmaSchedule& sched,
                         const DsmBatch& batch, nn::ParamBuffer<S>* grad);

struct AdamState {
    nn::ParamBuffer<float> m;
    nn::ParamBuffer<float> v;
    std::int64_t step = 0;
};

/// Clips the gradient to cfg.grad_clip global norm and applies one Adam update.
/// Returns the pre-clip gradient norm.
double adam_update(nn::ParamBuffer<float>& params, nn::ParamBuffer<float>& grad, AdamState& state, double lr,
                   const TrainConfig& cfg);

/// lr * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps);

struct TrainedModel {
    ModelConfig model;
    SigmaSchedule sched;
    NormStats norm;
    ReturnStats stats;
    VelocityTarget target;
    double gamma = 0.99;
    int horizon = 50;
    TrainConfig train;
    std::string dataset_hash;

    nn::ParamBuffer<float> params;
    AdamState adam;
    int epochs_done = 0;
    std::vector<double> step_losses;
    std::vector<double> epoch_losses;
};

using EpochCallback = std::function<void(const TrainedModel&)>;

/// Fresh run. Throws MissingLabelsError when the dataset carries no scaled
/// returns. `stop_after_epoch` ends the call early (for checkpoint/resume);
/// the cosine schedule always spans train_cfg.epochs.
TrainedModel train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                   const EpochCallback& on_epoch = {}, std::optional<int> stop_after_epoch = {});

/// Continues a run until model.train.epochs (or stop_after_epoch). Bitwise
/// identical to an uninterrupted run on the same dataset.
TrainedModel resume_training(TrainedModel model, const Dataset& ds, const EpochCallback& on_epoch = {},
                             std::optional<int> stop_after_epoch = {});

/// Number of optimizer steps in one epoch.
int steps_per_epoch(const TrainConfig& cfg, std::size_t n_windows);

/// Float network matching a trained model's configuration.
DecoderNet<float> make_network(const TrainedModel& m);

}  // namespace cfgloco
