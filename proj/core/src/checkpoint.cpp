#include <cfgloco/checkpoint.hpp>
#include <cfgloco/container.hpp>
#include <cfgloco/errors.hpp>

#include "serialization.hpp"

namespace cfgloco {

namespace {
constexpr const char* kCheckpointKind = "cfgloco-checkpoint";
constexpr int kCheckpointVersion = 1;

std::vector<float> f32(const Container& c, const std::string& name, std::size_t expected) {
    const auto& a = c.array(name);
    if (a.dtype != DType::F32) throw FormatError("checkpoint: array '" + name + "' is not f32");
    auto v = a.as<float>();
    if (expected && v.size() != expected) throw FormatError("checkpoint: array '" + name + "' has the wrong size");
    return v;
}
}  // namespace

void save_checkpoint(const TrainedModel& m, const std::filesystem::path& path) {
    const DecoderNet<float> net(m.model);
    if (m.params.data.size() != net.layout().total())
        throw InvalidArgument("checkpoint: weights do not match the model configuration");
    Container c;
    c.kind = kCheckpointKind;
    c.version = kCheckpointVersion;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : net.layout().specs()) tensors.push_back({t.name, t.rows, t.cols});
    c.meta = {{"model", m.model},
              {"sched", m.sched},
              {"norm",
               {{"obs_mean", vec_to_json(m.norm.obs_mean)},
                {"obs_std", vec_to_json(m.norm.obs_std)},
                {"act_mean", vec_to_json(m.norm.act_mean)},
                {"act_std", vec_to_json(m.norm.act_std)}}},
              {"return_stats", m.stats},
              {"target", m.target},
              {"gamma", m.gamma},
              {"return_horizon", m.horizon},
              {"train", m.train},
              {"dataset_hash", m.dataset_hash},
              {"epochs_done", m.epochs_done},
              {"adam_step", m.adam.step},
              {"tensors", tensors}};
    const auto n = static_cast<std::int64_t>(m.params.data.size());
    c.arrays.push_back(NamedArray::from("params", DType::F32, n, 1, m.params.data.data()));
    const bool has_adam = m.adam.m.data.size() == m.params.data.size();
    c.meta["has_optimizer_state"] = has_adam;
    if (has_adam) {
        c.arrays.push_back(NamedArray::from("adam_m", DType::F32, n, 1, m.adam.m.data.data()));
        c.arrays.push_back(NamedArray::from("adam_v", DType::F32, n, 1, m.adam.v.data.data()));
    }
    c.arrays.push_back(NamedArray::from("step_losses", DType::F64, static_cast<std::int64_t>(m.step_losses.size()), 1,
                                        m.step_losses.data()));
    c.arrays.push_back(NamedArray::from("epoch_losses", DType::F64, static_cast<std::int64_t>(m.epoch_losses.size()),
                                        1, m.epoch_losses.data()));
    write_container(c, path);
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
    const Container c = read_container(path, kCheckpointKind, kCheckpointVersion);
    TrainedModel m;
    try {
        m.model = c.meta.at("model").get<ModelConfig>();
        m.model.validate();
        m.sched = c.meta.at("sched").get<SigmaSchedule>();
        const auto& n = c.meta.at("norm");
        m.norm.obs_mean = vec_from_json(n.at("obs_mean"));
        m.norm.obs_std = vec_from_json(n.at("obs_std"));
        m.norm.act_mean = vec_from_json(n.at("act_mean"));
        m.norm.act_std = vec_from_json(n.at("act_std"));
        m.stats = c.meta.at("return_stats").get<ReturnStats>();
        m.target = c.meta.at("target").get<VelocityTarget>();
        m.gamma = c.meta.at("gamma").get<double>();
        m.horizon = c.meta.at("return_horizon").get<int>();
        m.train = c.meta.at("train").get<TrainConfig>();
        m.dataset_hash = c.meta.at("dataset_hash").get<std::string>();
        m.epochs_done = c.meta.at("epochs_done").get<int>();
        m.adam.step = c.meta.at("adam_step").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    const DecoderNet<float> net(m.model);
    const std::size_t total = net.layout().total();
    const auto params = f32(c, "params", total);
    m.params.data.assign(params.begin(), params.end());
    if (c.meta.value("has_optimizer_state", false)) {
        const auto am = f32(c, "adam_m", total);
        const auto av = f32(c, "adam_v", total);
        m.adam.m.data.assign(am.begin(), am.end());
        m.adam.v.data.assign(av.begin(), av.end());
    }
    m.step_losses = c.array("step_losses").as<double>();
    m.epoch_losses = c.array("epoch_losses").as<double>();
    return m;
}

std::string weights_hash(const TrainedModel& m) {
    const auto* p = reinterpret_cast<const std::byte*>(m.params.data.data());
    return sha256_hex({p, m.params.data.size() * sizeof(float)});
}

}  // namespace cfgloco
