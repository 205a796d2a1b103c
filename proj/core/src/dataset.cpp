#include <cfgloco/container.hpp>
#include <cfgloco/dataset.hpp>
#include <cfgloco/errors.hpp>

#include "rng.hpp"
#include "serialization.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace cfgloco {

namespace {
constexpr const char* kDatasetKind = "cfgloco-dataset";
constexpr int kDatasetVersion = 1;

int axis_index(std::string_view axis) {
    if (axis == "vx") return 0;
    if (axis == "vy") return 1;
    if (axis == "wz") return 2;
    throw InvalidArgument("unknown velocity axis '" + std::string(axis) + "' (expected vx, vy or wz)");
}

constexpr const char* kAxisNames[3] = {"vx", "vy", "wz"};
}  // namespace

VelocityTarget VelocityTarget::on_axis(std::string_view axis, double value) {
    VelocityTarget t;
    const int i = axis_index(axis);
    t.value[static_cast<std::size_t>(i)] = value;
    t.active[static_cast<std::size_t>(i)] = true;
    return t;
}

VelocityTarget VelocityTarget::parse(std::string_view spec) {
    VelocityTarget t;
    std::string s(spec);
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw InvalidArgument("velocity target '" + item + "' is not axis=value");
        const auto i = static_cast<std::size_t>(axis_index(item.substr(0, eq)));
        try {
            t.value[i] = std::stod(item.substr(eq + 1));
        } catch (const std::exception&) {
            throw InvalidArgument("velocity target '" + item + "' has a non-numeric value");
        }
        t.active[i] = true;
    }
    if (!t.any()) throw InvalidArgument("velocity target is empty");
    return t;
}

std::string VelocityTarget::describe() const {
    std::ostringstream os;
    bool first = true;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!active[i]) continue;
        if (!first) os << ',';
        os << kAxisNames[i] << '=' << value[i];
        first = false;
    }
    return os.str();
}

Command VelocityTarget::as_command() const {
    return {active[0] ? value[0] : 0.0, active[1] ? value[1] : 0.0, active[2] ? value[2] : 0.0};
}

double velocity_reward(const std::array<double, 3>& v, const VelocityTarget& target) {
    double e = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!target.active[i]) continue;
        const double d = v[i] - target.value[i];
        e += d * d;
    }
    return std::exp(-3.0 * e) - 1.0;
}

double ReturnStats::scale(double raw_return) const {
    const double r = std::exp(raw_return / temperature);
    return normalize ? (r - r_min) / (r_max - r_min) : r;
}

void Dataset::validate() const {
    const auto n = static_cast<Eigen::Index>(size());
    if (actions.rows() != n || velocity.rows() != n || commands.rows() != n ||
        terminated.size() != static_cast<std::size_t>(n))
        throw InvalidArgument("dataset: record arrays have different lengths");
    std::size_t covered = 0;
    for (const auto& e : episodes) {
        if (e.length == 0) throw InvalidArgument("dataset: empty episode");
        if (e.offset != covered) throw InvalidArgument("dataset: episodes are not contiguous");
        covered += e.length;
    }
    if (covered != size()) throw InvalidArgument("dataset: episodes do not cover all records");
    if (labels) {
        if (labels->reward.size() != size()) throw InvalidArgument("dataset: reward labels length mismatch");
        if (!labels->scaled_return.empty() &&
            (labels->scaled_return.size() != size() || labels->raw_return.size() != size()))
            throw InvalidArgument("dataset: return labels length mismatch");
    }
}

Dataset collect_dataset(std::size_t steps_per_skill, std::uint64_t seed, const EnvConfig& env) {
    env.validate();
    constexpr double two_pi = 2.0 * std::numbers::pi;
    Dataset ds;
    ds.env = env;
    ds.seed = seed;
    ds.steps_per_skill = steps_per_skill;
    const std::size_t total = steps_per_skill * kNumSkills;
    ds.obs.resize(static_cast<Eigen::Index>(total), kObsDim);
    ds.actions.resize(static_cast<Eigen::Index>(total), kActionDim);
    ds.velocity.resize(static_cast<Eigen::Index>(total), 3);
    ds.commands.resize(static_cast<Eigen::Index>(total), 3);
    ds.terminated.assign(total, 0);

    std::size_t row = 0;
    for (int skill_id = 0; skill_id < kNumSkills; ++skill_id) {
        const auto skill = static_cast<Skill>(skill_id);
        auto rng = detail::keyed_rng({seed, static_cast<std::uint64_t>(skill_id), 0xC011EC7});
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        std::uniform_real_distribution<double> height(env.init_height_min, env.init_height_max);
        std::uniform_real_distribution<double> phase(0.0, two_pi);
        std::uniform_int_distribution<int> segment(env.command_segment_min, env.command_segment_max);
        std::normal_distribution<double> normal(0.0, 1.0);
        // separate stream so pushes leave the rest of the rollout draws alone
        auto push_rng = detail::keyed_rng({seed, static_cast<std::uint64_t>(skill_id), 0x9054});
        std::bernoulli_distribution push(env.push_prob);
        auto draw_command = [&] {
            return Command{unit(rng) * env.commands.vx_max, unit(rng) * env.commands.vy_max,
                           unit(rng) * env.commands.wz_max};
        };

        std::size_t remaining = steps_per_skill;
        while (remaining > 0) {
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(env.episode_length), remaining);
            EnvState s;
            s.vx = unit(rng) * env.commands.vx_max * env.init_velocity_scale;
            s.vy = unit(rng) * env.commands.vy_max * env.init_velocity_scale;
            s.wz = unit(rng) * env.commands.wz_max * env.init_velocity_scale;
            s.h = height(rng);
            const double p0 = phase(rng);
            s.phase = {p0, std::fmod(p0 + std::numbers::pi, two_pi), std::fmod(p0 + std::numbers::pi, two_pi), p0};
            Command cmd = draw_command();
            std::size_t next_switch = static_cast<std::size_t>(segment(rng));

            const std::size_t start = row;
            std::size_t t = 0;
            for (; t < len; ++t) {
                if (t == next_switch) {
                    cmd = draw_command();
                    next_switch += static_cast<std::size_t>(segment(rng));
                }
                Action a = expert_action(s, cmd, skill, env);
                auto arr = a.to_array();
                for (std::size_t k = 0; k < kActionDim; ++k) arr[k] += env.action_noise[k] * normal(rng);
                a = clamp_action(Action::from_array(arr.data()), env);

                const auto r = static_cast<Eigen::Index>(row);
                ds.obs.row(r) = observe(s).transpose();
                const auto issued = a.to_array();
                for (Eigen::Index k = 0; k < kActionDim; ++k) ds.actions(r, k) = issued[static_cast<std::size_t>(k)];
                ds.commands.row(r) << cmd.vx, cmd.vy, cmd.wz;
                const StepResult res = step(s, a, env);
                s = res.state;
                ds.velocity.row(r) << s.vx, s.vy, s.wz;
                ds.terminated[row] = res.terminated ? 1 : 0;
                if (env.push_prob > 0.0 && !res.terminated && push(push_rng)) {
                    const double lim = env.vx_limit - 0.1;
                    s.vx = std::clamp(s.vx + unit(push_rng) * env.push_fraction * env.commands.vx_max, -lim, lim);
                    s.vy += unit(push_rng) * env.push_fraction * env.commands.vy_max;
                    s.wz += unit(push_rng) * env.push_fraction * env.commands.wz_max;
                }
                ++row;
                if (res.terminated) {
                    ++t;
                    break;
                }
            }
            ds.episodes.push_back({start, t, skill});
            remaining -= t;
        }
    }
    ds.validate();
    return ds;
}

Dataset label_rewards(Dataset ds, const VelocityTarget& target) {
    if (!target.any()) throw InvalidArgument("label_rewards: velocity target has no active component");
    ReturnLabels labels;
    labels.target = target;
    labels.reward.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        labels.reward[i] = velocity_reward({ds.velocity(r, 0), ds.velocity(r, 1), ds.velocity(r, 2)}, target);
    }
    ds.labels = std::move(labels);
    return ds;
}

Dataset label_returns(Dataset ds, double gamma, int horizon, ReturnStats stats) {
    if (horizon < 1) throw InvalidArgument("label_returns: horizon must be >= 1");
    if (!ds.labels || ds.labels->reward.size() != ds.size())
        throw MissingLabelsError("label_returns: dataset has no reward labels");
    if (!(stats.temperature > 0.0)) throw InvalidArgument("label_returns: temperature must be positive");
    auto& L = *ds.labels;
    L.gamma = gamma;
    L.horizon = horizon;
    L.raw_return.assign(ds.size(), 0.0);
    for (const auto& ep : ds.episodes) {
        const std::size_t end = ep.offset + ep.length;
        for (std::size_t t = ep.offset; t < end; ++t) {
            const std::size_t stop = std::min(end, t + static_cast<std::size_t>(horizon));
            double acc = 0.0;
            double disc = 1.0;
            for (std::size_t k = t; k < stop; ++k) {
                acc += disc * L.reward[k];
                disc *= gamma;
            }
            L.raw_return[t] = acc;
        }
    }
    L.scaled_return.resize(ds.size());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        L.scaled_return[i] = std::exp(L.raw_return[i] / stats.temperature);
        lo = std::min(lo, L.scaled_return[i]);
        hi = std::max(hi, L.scaled_return[i]);
    }
    stats.r_min = lo;
    stats.r_max = hi;
    if (stats.normalize) {
        if (!(lo < hi)) throw InvalidArgument("label_returns: degenerate return range, cannot normalise");
        for (auto& v : L.scaled_return) v = (v - lo) / (hi - lo);
    }
    L.stats = stats;
    return ds;
}

namespace {

Container to_container(const Dataset& ds) {
    ds.validate();
    Container c;
    c.kind = kDatasetKind;
    c.version = kDatasetVersion;
    const auto n = static_cast<std::int64_t>(ds.size());
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : ds.episodes) eps.push_back({e.offset, e.length, static_cast<int>(e.skill)});
    c.meta = {{"env", ds.env},
              {"seed", ds.seed},
              {"steps_per_skill", ds.steps_per_skill},
              {"skills", {"walk", "crawl"}},
              {"command_box", ds.env.commands},
              {"episodes", eps},
              {"has_reward_labels", ds.labels.has_value()},
              {"has_return_labels", ds.has_returns()}};
    c.arrays.push_back(NamedArray::from("obs", DType::F64, n, kObsDim, ds.obs.data()));
    c.arrays.push_back(NamedArray::from("actions", DType::F64, n, kActionDim, ds.actions.data()));
    c.arrays.push_back(NamedArray::from("velocity", DType::F64, n, 3, ds.velocity.data()));
    c.arrays.push_back(NamedArray::from("commands", DType::F64, n, 3, ds.commands.data()));
    c.arrays.push_back(NamedArray::from("terminated", DType::U8, n, 1, ds.terminated.data()));
    if (ds.labels) {
        const auto& L = *ds.labels;
        c.meta["labels"] = {{"target", L.target}, {"gamma", L.gamma}, {"horizon", L.horizon}, {"stats", L.stats}};
        c.arrays.push_back(NamedArray::from("reward", DType::F64, n, 1, L.reward.data()));
        if (ds.has_returns()) {
            c.arrays.push_back(NamedArray::from("raw_return", DType::F64, n, 1, L.raw_return.data()));
            c.arrays.push_back(NamedArray::from("scaled_return", DType::F64, n, 1, L.scaled_return.data()));
        }
    }
    return c;
}

Mat to_mat(const NamedArray& a, Eigen::Index cols) {
    if (a.dtype != DType::F64 || a.cols != cols) throw FormatError("dataset: array '" + a.name + "' has wrong layout");
    const auto v = a.as<double>();
    Mat m(a.rows, a.cols);
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    write_container(to_container(ds), path);
}

Dataset load_dataset(const std::filesystem::path& path) {
    const Container c = read_container(path, kDatasetKind, kDatasetVersion);
    Dataset ds;
    try {
        ds.env = c.meta.at("env").get<EnvConfig>();
        ds.seed = c.meta.at("seed").get<std::uint64_t>();
        ds.steps_per_skill = c.meta.at("steps_per_skill").get<std::size_t>();
        for (const auto& e : c.meta.at("episodes"))
            ds.episodes.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(),
                                   static_cast<Skill>(e.at(2).get<int>())});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed dataset header: " + e.what());
    }
    ds.obs = to_mat(c.array("obs"), kObsDim);
    ds.actions = to_mat(c.array("actions"), kActionDim);
    ds.velocity = to_mat(c.array("velocity"), 3);
    ds.commands = to_mat(c.array("commands"), 3);
    ds.terminated = c.array("terminated").as<std::uint8_t>();
    if (c.meta.value("has_reward_labels", false)) {
        ReturnLabels L;
        const auto& lm = c.meta.at("labels");
        L.target = lm.at("target").get<VelocityTarget>();
        L.gamma = lm.at("gamma").get<double>();
        L.horizon = lm.at("horizon").get<int>();
        L.stats = lm.at("stats").get<ReturnStats>();
        L.reward = c.array("reward").as<double>();
        if (c.meta.value("has_return_labels", false)) {
            L.raw_return = c.array("raw_return").as<double>();
            L.scaled_return = c.array("scaled_return").as<double>();
        }
        ds.labels = std::move(L);
    }
    ds.validate();
    return ds;
}

std::string dataset_content_hash(const Dataset& ds) { return to_container(ds).payload_hash(); }

}  // namespace cfgloco
