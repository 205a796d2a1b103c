#include <cfgloco/errors.hpp>
#include <cfgloco/samplers.hpp>
#include <cfgloco/train.hpp>

#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace cfgloco {

namespace {

void column_stats(const Mat& m, Vec& mean, Vec& stddev) {
    mean = m.colwise().mean().transpose();
    stddev.resize(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double var = (m.col(c).array() - mean(c)).square().mean();
        const double s = std::sqrt(var);
        stddev(c) = s > 1e-6 ? s : 1.0;
    }
}

}  // namespace

NormStats NormStats::from_dataset(const Dataset& ds) {
    if (ds.size() == 0) throw InvalidArgument("normalisation: empty dataset");
    NormStats n;
    column_stats(ds.obs, n.obs_mean, n.obs_std);
    column_stats(ds.actions, n.act_mean, n.act_std);
    return n;
}

Mat NormStats::normalize_obs(const Mat& obs) const {
    return ((obs.rowwise() - obs_mean.transpose()).array().rowwise() / obs_std.transpose().array()).matrix();
}

Mat NormStats::normalize_actions(const Mat& a) const {
    return ((a.rowwise() - act_mean.transpose()).array().rowwise() / act_std.transpose().array()).matrix();
}

Mat NormStats::denormalize_actions(const Mat& a) const {
    return ((a.array().rowwise() * act_std.transpose().array()).matrix().rowwise() + act_mean.transpose());
}

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidArgument("train: epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
    if (!(lr > 0.0)) throw InvalidArgument("train: lr must be positive");
    if (!(grad_clip > 0.0)) throw InvalidArgument("train: grad_clip must be positive");
    if (steps_per_epoch < 0) throw InvalidArgument("train: steps_per_epoch must be >= 0");
}

TrainingSet::TrainingSet(const Dataset& ds, const ModelConfig& cfg, const NormStats& norm) : cfg_(cfg) {
    ds.validate();
    if (cfg.obs_dim != kObsDim || cfg.action_dim != kActionDim)
        throw InvalidArgument("training set: model dimensions do not match the environment");
    obs_ = norm.normalize_obs(ds.obs);
    act_ = norm.normalize_actions(ds.actions);
    episode_start_.resize(ds.size());
    skill_.resize(ds.size());
    const auto t = static_cast<std::size_t>(cfg.horizon);
    for (const auto& ep : ds.episodes) {
        for (std::size_t i = ep.offset; i < ep.offset + ep.length; ++i) {
            episode_start_[i] = ep.offset;
            skill_[i] = static_cast<int>(ep.skill);
        }
        if (ep.length >= t)
            for (std::size_t i = ep.offset; i + t <= ep.offset + ep.length; ++i) starts_.push_back(i);
    }
    if (starts_.empty()) throw InvalidArgument("training set: no episode is long enough for one window");
    ret_ = ds.has_returns() ? ds.labels->scaled_return : std::vector<double>(ds.size(), 0.0);
}

Mat TrainingSet::obs_history(std::size_t record) const {
    Mat h(cfg_.t_cond, cfg_.obs_dim);
    const std::size_t first = episode_start_[record];
    for (int k = 0; k < cfg_.t_cond; ++k) {
        const std::size_t back = static_cast<std::size_t>(cfg_.t_cond - 1 - k);
        const std::size_t src = record >= first + back ? record - back : first;
        h.row(k) = obs_.row(static_cast<Eigen::Index>(src));
    }
    return h;
}

Mat TrainingSet::action_window(std::size_t record) const {
    return act_.middleRows(static_cast<Eigen::Index>(record), cfg_.horizon);
}

double TrainingSet::action_std() const {
    Vec mean, sd;
    column_stats(act_, mean, sd);
    return sd.mean();
}

template <typename S>
double dsm_loss_and_grad(const DecoderNet<S>& net, const nn::ParamBuffer<S>& params, const SigmaSchedule& sched,
                         const DsmBatch& batch, nn::ParamBuffer<S>* grad) {
    const auto& cfg = net.config();
    const auto b = static_cast<Eigen::Index>(batch.sigma.size());
    const Eigen::Index t = cfg.horizon;
    if (b == 0) throw InvalidArgument("dsm loss: empty batch");
    if (batch.conds.size() != batch.sigma.size() || batch.clean.rows() != b * t ||
        batch.clean.cols() != cfg.action_dim || batch.noise.rows() != batch.clean.rows() ||
        batch.noise.cols() != batch.clean.cols())
        throw InvalidArgument("dsm loss: batch arrays disagree in shape");
    for (std::size_t i = 0; i < batch.sigma.size(); ++i)
        if (batch.conds[i].sigma != batch.sigma[i])
            throw InvalidArgument("dsm loss: conditioning sigma differs from the batch sigma");

    const Mat x = batch.clean + batch.noise;
    std::vector<PreconditionScalars> pc(static_cast<std::size_t>(b));
    MatT<S> scaled(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
        const double sigma = batch.sigma[static_cast<std::size_t>(i)];
        if (!(sigma > 0.0)) throw InvalidArgument("dsm loss: sigma must be positive");
        pc[static_cast<std::size_t>(i)] = precondition(sigma, sched);
        scaled.middleRows(i * t, t) = (pc[static_cast<std::size_t>(i)].c_in * x.middleRows(i * t, t)).template cast<S>();
    }
    const auto in = net.make_cond_inputs(batch.conds);
    const MatT<S> tokens = net.embed(params, in);
    typename DecoderNet<S>::Cache cache;
    const MatT<S> f = net.forward(params, scaled, tokens, grad ? &cache : nullptr);

    double loss = 0.0;
    MatT<S> d_f(f.rows(), f.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
        const auto& p = pc[static_cast<std::size_t>(i)];
        const double w = loss_weight(batch.sigma[static_cast<std::size_t>(i)], sched);
        const Mat r = p.c_skip * x.middleRows(i * t, t) + p.c_out * f.middleRows(i * t, t).template cast<double>() -
                      batch.clean.middleRows(i * t, t);
        loss += w * r.squaredNorm();
        d_f.middleRows(i * t, t) = ((2.0 * w * p.c_out / static_cast<double>(b)) * r).template cast<S>();
    }
    loss /= static_cast<double>(b);
    if (grad) {
        const MatT<S> d_cond = net.backward(params, cache, d_f, *grad);
        net.embed_backward(params, in, d_cond, *grad);
    }
    return loss;
}

template double dsm_loss_and_grad<float>(const DecoderNet<float>&, const nn::ParamBuffer<float>&,
                                         const SigmaSchedule&, const DsmBatch&, nn::ParamBuffer<float>*);
template double dsm_loss_and_grad<double>(const DecoderNet<double>&, const nn::ParamBuffer<double>&,
                                          const SigmaSchedule&, const DsmBatch&, nn::ParamBuffer<double>*);

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return base_lr;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double adam_update(nn::ParamBuffer<float>& params, nn::ParamBuffer<float>& grad, AdamState& st, double lr,
                   const TrainConfig& cfg) {
    const std::size_t n = params.data.size();
    if (grad.data.size() != n) throw InvalidArgument("adam: gradient size mismatch");
    if (st.m.data.size() != n) st.m.data.assign(n, 0.0f);
    if (st.v.data.size() != n) st.v.data.assign(n, 0.0f);
    double sq = 0.0;
    for (float g : grad.data) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    const float scale = norm > cfg.grad_clip ? static_cast<float>(cfg.grad_clip / norm) : 1.0f;

    ++st.step;
    const auto b1 = static_cast<float>(cfg.beta1);
    const auto b2 = static_cast<float>(cfg.beta2);
    const auto bc1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(st.step)));
    const auto bc2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(st.step)));
    const auto lr_f = static_cast<float>(lr);
    const auto eps = static_cast<float>(cfg.adam_eps);
    float* p = params.data.data();
    float* m = st.m.data.data();
    float* v = st.v.data.data();
    const float* g = grad.data.data();
    for (std::size_t i = 0; i < n; ++i) {
        const float gi = g[i] * scale;
        m[i] = b1 * m[i] + (1.0f - b1) * gi;
        v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
        p[i] -= lr_f * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
    return norm;
}

int steps_per_epoch(const TrainConfig& cfg, std::size_t n_windows) {
    if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
    const auto b = static_cast<std::size_t>(cfg.batch_size);
    return static_cast<int>(std::max<std::size_t>(1, (n_windows + b - 1) / b));
}

DecoderNet<float> make_network(const TrainedModel& m) { return DecoderNet<float>(m.model); }

namespace {

constexpr std::uint64_t kShuffleKey = 0x5EED0001;
constexpr std::uint64_t kStepKey = 0x5EED0002;

DsmBatch make_batch(const TrainingSet& ts, const std::vector<std::size_t>& order, std::size_t first,
                    const TrainedModel& m, std::mt19937_64& rng) {
    const auto b = static_cast<std::size_t>(m.train.batch_size);
    const Eigen::Index t = m.model.horizon;
    DsmBatch batch;
    batch.clean.resize(static_cast<Eigen::Index>(b) * t, m.model.action_dim);
    batch.noise.resize(batch.clean.rows(), batch.clean.cols());
    batch.sigma.resize(b);
    batch.conds.resize(b);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Mat eps(t, m.model.action_dim);
    for (std::size_t k = 0; k < b; ++k) {
        const std::size_t rec = ts.start(order[(first + k) % order.size()]);
        const auto row = static_cast<Eigen::Index>(k) * t;
        const double sigma = sample_training_sigma(rng, m.sched);
        fill_standard_normal(eps, rng);
        batch.clean.middleRows(row, t) = ts.action_window(rec);
        batch.noise.middleRows(row, t) = sigma * eps;
        batch.sigma[k] = sigma;
        auto& c = batch.conds[k];
        c.obs_history = ts.obs_history(rec);
        c.skill = ts.skill(rec);
        c.sigma = sigma;
        if (unit(rng) >= m.model.mask_prob) c.return_value = ts.scaled_return(rec);
    }
    return batch;
}

TrainedModel run_epochs(TrainedModel m, const TrainingSet& ts, const EpochCallback& on_epoch,
                        std::optional<int> stop_after_epoch) {
    const DecoderNet<float> net(m.model);
    const int spe = steps_per_epoch(m.train, ts.size());
    const std::int64_t total = static_cast<std::int64_t>(spe) * m.train.epochs;
    nn::ParamBuffer<float> grad(net.layout());
    std::vector<std::size_t> order(ts.size());
    for (int epoch = m.epochs_done; epoch < m.train.epochs; ++epoch) {
        if (stop_after_epoch && epoch >= *stop_after_epoch) break;
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = detail::keyed_rng({m.train.seed, static_cast<std::uint64_t>(epoch), kShuffleKey});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double acc = 0.0;
        for (int s = 0; s < spe; ++s) {
            auto rng = detail::keyed_rng({m.train.seed, static_cast<std::uint64_t>(m.adam.step), kStepKey});
            const DsmBatch batch =
                make_batch(ts, order, static_cast<std::size_t>(s) * static_cast<std::size_t>(m.train.batch_size), m, rng);
            grad.zero();
            const double loss = dsm_loss_and_grad<float>(net, m.params, m.sched, batch, &grad);
            if (!std::isfinite(loss)) throw DivergedSampleError(static_cast<std::size_t>(m.adam.step), "training loss is not finite");
            adam_update(m.params, grad, m.adam, cosine_lr(m.train.lr, m.adam.step, total), m.train);
            m.step_losses.push_back(loss);
            acc += loss;
        }
        m.epoch_losses.push_back(acc / spe);
        m.epochs_done = epoch + 1;
        if (on_epoch) on_epoch(m);
    }
    return m;
}

}  // namespace

TrainedModel train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                   const EpochCallback& on_epoch, std::optional<int> stop_after_epoch) {
    model_cfg.validate();
    train_cfg.validate();
    if (!ds.has_returns()) throw MissingLabelsError("train: dataset has no return labels; run collect with a reward target");
    TrainedModel m;
    m.model = model_cfg;
    m.train = train_cfg;
    m.norm = NormStats::from_dataset(ds);
    m.stats = ds.labels->stats;
    m.target = ds.labels->target;
    m.gamma = ds.labels->gamma;
    m.horizon = ds.labels->horizon;
    m.dataset_hash = dataset_content_hash(ds);
    const TrainingSet ts(ds, model_cfg, m.norm);
    m.sched = SigmaSchedule::for_data_std(ts.action_std());
    const DecoderNet<float> net(model_cfg);
    m.params = net.init_params(train_cfg.seed);
    m.adam.m = nn::ParamBuffer<float>(net.layout());
    m.adam.v = nn::ParamBuffer<float>(net.layout());
    return run_epochs(std::move(m), ts, on_epoch, stop_after_epoch);
}

TrainedModel resume_training(TrainedModel m, const Dataset& ds, const EpochCallback& on_epoch,
                             std::optional<int> stop_after_epoch) {
    if (!ds.has_returns()) throw MissingLabelsError("resume: dataset has no return labels");
    if (!m.dataset_hash.empty() && dataset_content_hash(ds) != m.dataset_hash)
        throw InvalidArgument("resume: dataset differs from the one the checkpoint was trained on");
    const TrainingSet ts(ds, m.model, m.norm);
    return run_epochs(std::move(m), ts, on_epoch, stop_after_epoch);
}

}  // namespace cfgloco
