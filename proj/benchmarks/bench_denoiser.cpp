#include <cfgloco/denoiser.hpp>
#include <cfgloco/grad_check.hpp>
#include <cfgloco/train.hpp>

#include <benchmark/benchmark.h>

#include <random>

using namespace cfgloco;

namespace {

ModelConfig sized(int d_model, int layers) {
    ModelConfig m;
    m.d_model = d_model;
    m.n_layers = layers;
    return m;
}

std::vector<Conditioning> conds(const ModelConfig& cfg, int batch) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Conditioning> out(static_cast<std::size_t>(batch));
    for (auto& c : out) {
        c.obs_history.resize(cfg.t_cond, cfg.obs_dim);
        for (Eigen::Index i = 0; i < c.obs_history.size(); ++i) c.obs_history.data()[i] = n(rng);
        c.return_value = 0.9;
        c.sigma = 1.0;
    }
    return out;
}

// args: d_model, layers, batch
void BM_DenoiseBatch(benchmark::State& state) {
    const ModelConfig cfg = sized(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    const int batch = static_cast<int>(state.range(2));
    const DecoderNet<float> net(cfg);
    const auto params = net.init_params(1);
    const auto c = conds(cfg, batch);
    SigmaSchedule sched;
    Mat x = Mat::Random(batch * cfg.horizon, cfg.action_dim);
    for (auto _ : state) benchmark::DoNotOptimize(denoise_batch(net, params, sched, x, 1.0, c));
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenoiseBatch)->Args({64, 2, 1})->Args({64, 2, 100})->Args({128, 4, 1})->Unit(benchmark::kMicrosecond);

// args: d_model, layers, batch
void BM_TrainStep(benchmark::State& state) {
    const ModelConfig cfg = sized(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    const DecoderNet<float> net(cfg);
    auto params = net.init_params(1);
    const SigmaSchedule sched;
    const DsmBatch batch = make_probe_batch(cfg, static_cast<int>(state.range(2)), 7, 0.2, sched);
    nn::ParamBuffer<float> grad = params;
    for (auto _ : state) {
        std::fill(grad.data.begin(), grad.data.end(), 0.0f);
        benchmark::DoNotOptimize(dsm_loss_and_grad(net, params, sched, batch, &grad));
    }
    state.SetItemsProcessed(state.iterations() * state.range(2));
}
BENCHMARK(BM_TrainStep)->Args({64, 2, 256})->Args({128, 4, 256})->Unit(benchmark::kMillisecond);

}  // namespace
