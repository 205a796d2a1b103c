#include <doctest.h>

#include <cfgloco/container.hpp>
#include <cfgloco/dataset.hpp>
#include <cfgloco/errors.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace cfgloco;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "cfgloco_unit";
    fs::create_directories(dir);
    return dir / name;
}

// One 60-step episode with hand-set rewards.
Dataset synthetic(double reward) {
    Dataset ds;
    const Eigen::Index n = 60;
    ds.obs = Mat::Zero(n, kObsDim);
    ds.actions = Mat::Zero(n, kActionDim);
    ds.velocity = Mat::Zero(n, 3);
    ds.commands = Mat::Zero(n, 3);
    ds.terminated.assign(n, 0);
    ds.episodes.push_back({0, static_cast<std::size_t>(n), Skill::Walk});
    ReturnLabels l;
    l.reward.assign(n, reward);
    ds.labels = l;
    return ds;
}

}  // namespace

TEST_SUITE("locomotion_env") {

TEST_CASE("velocity target parsing") {
    const auto t = VelocityTarget::parse("vx=0.8");
    CHECK(t.active[0]);
    CHECK_FALSE(t.active[1]);
    CHECK(t.value[0] == 0.8);
    CHECK(t.describe() == "vx=0.8");
    const auto m = VelocityTarget::parse("vy=0.5,wz=-1");
    CHECK(m.active[1]);
    CHECK(m.active[2]);
    CHECK(m.as_command().wz == -1.0);
    CHECK_THROWS_AS(VelocityTarget::parse("vz=1"), InvalidArgument);
    CHECK_THROWS_AS(VelocityTarget::parse("vx"), InvalidArgument);
    CHECK_THROWS_AS(VelocityTarget::parse("vx=fast"), InvalidArgument);
}

TEST_CASE("reward values") {
    const auto t = VelocityTarget::on_axis("vx", 0.8);
    CHECK(velocity_reward({0.8, 0.3, -0.2}, t) == 0.0);
    CHECK(velocity_reward({0.0, 0.0, 0.0}, t) == doctest::Approx(-0.85339303786964986285).epsilon(1e-15));
    CHECK(velocity_reward({80.0, 0.0, 0.0}, t) == -1.0);
    auto both = t;
    both.active[1] = true;
    both.value[1] = 0.5;
    CHECK(velocity_reward({0.8, 0.0, 0.0}, both) == doctest::Approx(std::exp(-0.75) - 1.0));
}

TEST_CASE("collected dataset shape, bounds and skills") {
    const Dataset ds = collect_dataset(3000, 5);
    CHECK(ds.size() == 6000);
    std::size_t per_skill[2] = {0, 0};
    for (const auto& e : ds.episodes) {
        per_skill[static_cast<int>(e.skill)] += e.length;
        CHECK(e.length <= 250);
    }
    CHECK(per_skill[0] == 3000);
    CHECK(per_skill[1] == 3000);
    CHECK(ds.commands.col(0).cwiseAbs().maxCoeff() <= 0.8);
    CHECK(ds.commands.col(1).cwiseAbs().maxCoeff() <= 0.5);
    CHECK(ds.commands.col(2).cwiseAbs().maxCoeff() <= 1.0);
    CHECK(ds.commands.col(0).cwiseAbs().maxCoeff() > 0.6);
    CHECK_NOTHROW(ds.validate());
    CHECK_FALSE(ds.labels.has_value());
}

TEST_CASE("rewards lie in (-1, 0] on collected data") {
    const Dataset ds = label_rewards(collect_dataset(2000, 2), VelocityTarget::on_axis("vx", 0.8));
    const auto& r = ds.labels->reward;
    CHECK(*std::max_element(r.begin(), r.end()) <= 0.0);
    CHECK(*std::min_element(r.begin(), r.end()) > -1.0);
}

TEST_CASE("discounted return over a constant -1 reward") {
    ReturnStats st;
    st.normalize = false;
    const Dataset ds = label_returns(synthetic(-1.0), 0.99, 50, st);
    const auto& l = *ds.labels;
    CHECK(l.raw_return[0] == doctest::Approx(-39.499393286246334955).epsilon(1e-14));
    CHECK(l.scaled_return[0] == doctest::Approx(0.019255870020065056228).epsilon(1e-13));
    // truncated at the episode end
    CHECK(l.raw_return[59] == -1.0);
    CHECK(l.raw_return[58] == doctest::Approx(-1.99));
}

TEST_CASE("zero rewards give R0 = 0 and R = 1") {
    ReturnStats st;
    st.normalize = false;
    const Dataset ds = label_returns(synthetic(0.0), 0.99, 50, st);
    CHECK(ds.labels->raw_return[10] == 0.0);
    CHECK(ds.labels->scaled_return[10] == 1.0);
}

TEST_CASE("normalisation maps the batch range onto [0, 1] and keeps the order") {
    Dataset ds = label_rewards(collect_dataset(4000, 3), VelocityTarget::on_axis("vx", 0.8));
    ds = label_returns(ds, 0.99, 50, ReturnStats{});
    const auto& l = *ds.labels;
    CHECK(*std::min_element(l.scaled_return.begin(), l.scaled_return.end()) == 0.0);
    CHECK(*std::max_element(l.scaled_return.begin(), l.scaled_return.end()) == 1.0);
    CHECK(l.stats.r_min < l.stats.r_max);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return l.raw_return[a] < l.raw_return[b]; });
    for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
        const bool strict = l.raw_return[idx[i]] < l.raw_return[idx[i + 1]];
        if (strict) CHECK(l.scaled_return[idx[i]] <= l.scaled_return[idx[i + 1]]);
    }
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(l.stats.scale(l.raw_return[i]) == doctest::Approx(l.scaled_return[i]).epsilon(1e-12));
}

TEST_CASE("unnormalised returns lie strictly inside (0, 1)") {
    Dataset ds = label_rewards(collect_dataset(4000, 3), VelocityTarget::on_axis("vx", 0.8));
    ReturnStats st;
    st.normalize = false;
    ds = label_returns(ds, 0.99, 50, st);
    CHECK(ds.labels->stats.r_min > 0.0);
    CHECK(ds.labels->stats.r_max < 1.0);
    MESSAGE("unnormalised return range [" << ds.labels->stats.r_min << ", " << ds.labels->stats.r_max << "]");
}

TEST_CASE("label_returns preconditions") {
    CHECK_THROWS_AS(label_returns(synthetic(-0.5), 0.99, 0, {}), InvalidArgument);
    Dataset unl = synthetic(-0.5);
    unl.labels.reset();
    CHECK_THROWS_AS(label_returns(unl, 0.99, 50, {}), MissingLabelsError);
    CHECK_THROWS_AS(label_returns(synthetic(0.0), 0.99, 50, {}), InvalidArgument);  // constant range
}

TEST_CASE("same seed gives a byte-identical file") {
    const fs::path a = scratch("a.ds"), b = scratch("b.ds"), c = scratch("c.ds");
    save_dataset(collect_dataset(1500, 7), a);
    save_dataset(collect_dataset(1500, 7), b);
    save_dataset(collect_dataset(1500, 8), c);
    CHECK(sha256_file(a) == sha256_file(b));
    CHECK(sha256_file(a) != sha256_file(c));
    CHECK(dataset_content_hash(load_dataset(a)) == dataset_content_hash(collect_dataset(1500, 7)));
}

TEST_CASE("dataset roundtrip keeps records and labels") {
    Dataset ds = label_rewards(collect_dataset(1200, 4), VelocityTarget::on_axis("vy", 0.5));
    ReturnStats st;
    st.temperature = 100.0;
    ds = label_returns(ds, 0.99, 50, st);
    const fs::path p = scratch("rt.ds");
    save_dataset(ds, p);
    const Dataset back = load_dataset(p);
    CHECK(back.size() == ds.size());
    CHECK(back.episodes.size() == ds.episodes.size());
    CHECK((back.obs - ds.obs).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.has_returns());
    CHECK(back.labels->scaled_return == ds.labels->scaled_return);
    CHECK(back.labels->stats.temperature == 100.0);
    CHECK(back.labels->target.active[1]);
    CHECK(back.env.dt == ds.env.dt);
    CHECK(dataset_content_hash(back) == dataset_content_hash(ds));
}

TEST_CASE("loader rejects foreign, future and corrupted files") {
    const fs::path p = scratch("x.ds");
    save_dataset(collect_dataset(300, 1), p);
    std::string bytes;
    {
        std::ifstream in(p, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out << b;
    };
    std::string future = bytes;
    future.replace(future.find(" 1\n"), 3, " 9\n");
    write(future);
    CHECK_THROWS_AS(load_dataset(p), FormatError);

    std::string corrupt = bytes;
    corrupt[corrupt.size() - 5] ^= 0x5a;
    write(corrupt);
    CHECK_THROWS_AS(load_dataset(p), FormatError);

    write(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_dataset(p), FormatError);

    write("something else entirely\n");
    CHECK_THROWS_AS(load_dataset(p), FormatError);
}

}
