#include <cfgloco/control.hpp>
#include <cfgloco/env.hpp>

#include <benchmark/benchmark.h>

using namespace cfgloco;

namespace {

TrainedModel untrained(int d_model, int layers) {
    TrainedModel m;
    m.model.d_model = d_model;
    m.model.n_layers = layers;
    m.norm.obs_mean = Vec::Zero(m.model.obs_dim);
    m.norm.obs_std = Vec::Ones(m.model.obs_dim);
    m.norm.act_mean = Vec::Zero(m.model.action_dim);
    m.norm.act_std = Vec::Ones(m.model.action_dim);
    m.params = DecoderNet<float>(m.model).init_params(2);
    return m;
}

void BM_EnvStep(benchmark::State& state) {
    const EnvConfig env;
    EnvState s = rest_state(Skill::Walk, env);
    const Action a{0.5, 0.0, 0.0, 0.0, 0.0};
    for (auto _ : state) {
        auto r = step(s, a, env);
        s = r.terminated ? rest_state(Skill::Walk, env) : r.state;
        benchmark::DoNotOptimize(s);
    }
}
BENCHMARK(BM_EnvStep);

// One guided control step (batch 1); arg 0: sampler steps.
void BM_ControlStep(benchmark::State& state) {
    const TrainedModel m = untrained(64, 2);
    SamplerConfig sc{SamplerKind::DDIM, static_cast<int>(state.range(0)), 1};
    GuidanceConfig g;
    for (auto _ : state) {
        auto st = latency_probe(m, sc, g, {1, 0, true});
        benchmark::DoNotOptimize(st);
    }
}
BENCHMARK(BM_ControlStep)->Arg(3)->Arg(10)->Unit(benchmark::kMillisecond);

// 100 envs x 25 steps in lockstep.
void BM_RolloutBatch(benchmark::State& state) {
    const TrainedModel m = untrained(64, 2);
    EvalConfig c;
    c.rollout.n_envs = 100;
    c.rollout.steps = 25;
    for (auto _ : state) benchmark::DoNotOptimize(eval_tracking(m, c).mean_reward);
}
BENCHMARK(BM_RolloutBatch)->Unit(benchmark::kMillisecond);

}  // namespace
