#include <doctest.h>

#include "fixtures.hpp"

#include <cfgloco/checkpoint.hpp>
#include <cfgloco/errors.hpp>
#include <cfgloco/grad_check.hpp>
#include <cfgloco/train.hpp>

#include <numeric>
#include <random>

using namespace cfgloco;

namespace {

TrainConfig quick_train(int epochs, int steps) {
    TrainConfig t;
    t.epochs = epochs;
    t.steps_per_epoch = steps;
    t.batch_size = 16;
    t.lr = 1e-3;
    t.seed = 5;
    return t;
}

const Dataset& small_dataset() {
    static const Dataset ds = fixtures::labelled_dataset(600, 3);
    return ds;
}

}  // namespace

TEST_SUITE("denoiser") {

TEST_CASE("train config validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = TrainConfig{};
    t.lr = -1.0;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = TrainConfig{};
    t.epochs = -1;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
}

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(1.0, 0, 10) == doctest::Approx(1.0));
    CHECK(cosine_lr(1.0, 5, 10) == doctest::Approx(0.5));
    CHECK(cosine_lr(1.0, 10, 10) == doctest::Approx(0.0));
    CHECK(steps_per_epoch(TrainConfig{}, 1000) == 4);
}

TEST_CASE("normalisation round trip") {
    const auto& ds = small_dataset();
    const NormStats n = NormStats::from_dataset(ds);
    const Mat a = ds.actions.topRows(50);
    CHECK((n.denormalize_actions(n.normalize_actions(a)) - a).cwiseAbs().maxCoeff() < 1e-12);
    const Mat z = n.normalize_obs(ds.obs);
    CHECK(z.colwise().mean().cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("training windows stay inside one episode") {
    const auto& ds = small_dataset();
    const auto cfg = fixtures::small_model();
    const TrainingSet ts(ds, cfg, NormStats::from_dataset(ds));
    CHECK(ts.size() > 0);
    for (std::size_t w = 0; w < ts.size(); ++w) {
        const std::size_t s = ts.start(w);
        const auto ep = std::find_if(ds.episodes.begin(), ds.episodes.end(), [&](const EpisodeInfo& e) {
            return s >= e.offset && s < e.offset + e.length;
        });
        REQUIRE(ep != ds.episodes.end());
        CHECK(s + cfg.horizon <= ep->offset + ep->length);
    }
    // history at an episode start repeats its first observation
    const std::size_t first = ds.episodes[1].offset;
    const Mat h = ts.obs_history(first);
    for (Eigen::Index r = 1; r < h.rows(); ++r) CHECK((h.row(r) - h.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dsm gradient agrees with the generic loss") {
    const auto cfg = fixtures::small_model();
    const DecoderNet<double> net(cfg);
    const auto p = net.init_params(4);
    const SigmaSchedule sched;
    const DsmBatch b = make_probe_batch(cfg, 4, 2, 0.25, sched);
    const double l = dsm_loss_and_grad<double>(net, p, sched, b, nullptr);
    double ref = 0.0;
    const Eigen::Index t = cfg.horizon;
    for (std::size_t i = 0; i < b.sigma.size(); ++i) {
        const auto rows = static_cast<Eigen::Index>(i) * t;
        const Mat x = b.clean.middleRows(rows, t) + b.noise.middleRows(rows, t);
        const Mat d = denoise(net, p, sched, x, b.sigma[i], b.conds[i]);
        ref += loss_weight(b.sigma[i], sched) * (d - b.clean.middleRows(rows, t)).squaredNorm();
    }
    CHECK(l == doctest::Approx(ref / static_cast<double>(b.sigma.size())).epsilon(1e-12));
}

TEST_CASE("training without returns fails") {
    const Dataset ds = label_rewards(collect_dataset(300, 1), VelocityTarget::on_axis("vx", 0.8));
    CHECK_THROWS_AS(train(ds, fixtures::small_model(), quick_train(1, 2)), MissingLabelsError);
    CHECK_THROWS_AS(train(collect_dataset(300, 1), fixtures::small_model(), quick_train(1, 2)), MissingLabelsError);
}

TEST_CASE("zero epochs leave the initial weights") {
    const auto cfg = fixtures::small_model();
    const auto m = train(small_dataset(), cfg, quick_train(0, 3));
    const DecoderNet<float> net(cfg);
    CHECK(m.params.data == net.init_params(5).data);
    CHECK(m.step_losses.empty());
}

TEST_CASE("training is deterministic") {
    const auto cfg = fixtures::small_model();
    const auto a = train(small_dataset(), cfg, quick_train(2, 4));
    const auto b = train(small_dataset(), cfg, quick_train(2, 4));
    CHECK(a.params.data == b.params.data);
    CHECK(a.step_losses == b.step_losses);
    CHECK(a.step_losses.size() == 8);
    CHECK(weights_hash(a) == weights_hash(b));
}

TEST_CASE("resume reproduces an uninterrupted run") {
    const auto cfg = fixtures::small_model();
    const auto full = train(small_dataset(), cfg, quick_train(4, 3));
    const auto half = train(small_dataset(), cfg, quick_train(4, 3), {}, 2);
    CHECK(half.epochs_done == 2);
    const auto path = fixtures::scratch("resume.ckpt");
    save_checkpoint(half, path);
    const auto resumed = resume_training(load_checkpoint(path), small_dataset());
    CHECK(resumed.epochs_done == 4);
    CHECK(resumed.params.data == full.params.data);
    CHECK(resumed.step_losses == full.step_losses);
    CHECK(resumed.adam.step == full.adam.step);

    const Dataset other = fixtures::labelled_dataset(600, 4);
    CHECK_THROWS_AS(resume_training(half, other), InvalidArgument);
}

TEST_CASE("masking every return makes the output return-independent") {
    auto cfg = fixtures::small_model();
    cfg.mask_prob = 1.0 - 1e-12;
    const auto m = train(small_dataset(), cfg, quick_train(1, 5));
    const DecoderNet<float> net(cfg);
    Conditioning c = fixtures::random_conditioning(cfg, 3);
    Mat x = Mat::Ones(cfg.horizon, cfg.action_dim);
    c.return_value = 0.1;
    const Mat a = denoise(net, m.params, m.sched, x, 0.7, c);
    c.return_value = 0.9;
    const Mat b = denoise(net, m.params, m.sched, x, 0.7, c);
    c.return_value.reset();
    const Mat u = denoise(net, m.params, m.sched, x, 0.7, c);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a - u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam overfits a fixed batch") {
    ModelConfig cfg = fixtures::small_model();
    cfg.d_model = 32;
    cfg.n_layers = 2;
    const DecoderNet<float> net(cfg);
    auto p = net.init_params(9);
    const SigmaSchedule sched;
    DsmBatch b;
    const int n = 32;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(0.0, 1.0);
    b.clean.resize(n * cfg.horizon, cfg.action_dim);
    b.noise.resize(n * cfg.horizon, cfg.action_dim);
    for (Eigen::Index i = 0; i < b.clean.size(); ++i) b.clean.data()[i] = g(rng);
    for (int i = 0; i < n; ++i) {
        b.sigma.push_back(0.5);
        Conditioning c = fixtures::random_conditioning(cfg, static_cast<std::uint64_t>(100 + i));
        c.sigma = 0.5;
        b.conds.push_back(c);
    }
    for (Eigen::Index i = 0; i < b.noise.size(); ++i) b.noise.data()[i] = 0.5 * g(rng);
    TrainConfig tc;
    tc.grad_clip = 10.0;
    AdamState st{nn::ParamBuffer<float>(net.layout()), nn::ParamBuffer<float>(net.layout()), 0};
    nn::ParamBuffer<float> grad(net.layout());
    const double initial = dsm_loss_and_grad<float>(net, p, sched, b, nullptr);
    double last = initial;
    for (int it = 0; it < 2000; ++it) {
        grad.zero();
        last = dsm_loss_and_grad<float>(net, p, sched, b, &grad);
        adam_update(p, grad, st, 2e-3, tc);
    }
    MESSAGE("overfit loss " << initial << " -> " << last);
    CHECK(last < 0.01 * initial);
}

TEST_CASE("loss decreases under a moving average") {
    const auto cfg = fixtures::small_model();
    TrainConfig t = quick_train(1, 300);
    t.batch_size = 32;
    const auto m = train(small_dataset(), cfg, t);
    REQUIRE(m.step_losses.size() == 300);
    std::vector<double> ma;
    for (std::size_t i = 0; i + 50 <= m.step_losses.size(); i += 50)
        ma.push_back(std::accumulate(m.step_losses.begin() + static_cast<long>(i),
                                     m.step_losses.begin() + static_cast<long>(i + 50), 0.0) /
                     50.0);
    // block means are noisy near the plateau; compare the ends and the halves
    CHECK(ma.back() < ma.front());
    CHECK(ma[3] + ma[4] + ma[5] < ma[0] + ma[1] + ma[2]);
}

}
