#include <doctest.h>

#include "fixtures.hpp"

#include <cfgloco/diffusion.hpp>
#include <cfgloco/errors.hpp>
#include <cfgloco/guidance.hpp>

#include <random>

using namespace cfgloco;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

bool same_bits(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("guidance") {

TEST_CASE("lambda 0 and 1 return the branches bitwise") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Mat u = random_mat(8, 5, s), c = random_mat(8, 5, s + 100);
        CHECK(same_bits(combine_guidance(u, c, 0.0), u));
        CHECK(same_bits(combine_guidance(u, c, 1.0), c));
    }
}

TEST_CASE("stub denoisers extrapolate") {
    const DenoiseFn one = [](const Mat& x, double) { return Mat::Constant(x.rows(), x.cols(), 1.0).eval(); };
    const DenoiseFn two = [](const Mat& x, double) { return Mat::Constant(x.rows(), x.cols(), 2.0).eval(); };
    GuidanceConfig g;
    g.lambda = 2.0;
    const Mat out = cfg_denoise(one, two, Mat::Zero(8, 5), 1.0, g);
    CHECK((out.array() == 3.0).all());

    // affine in lambda
    for (double lam : {0.0, 0.3, 1.0, 1.5, 4.0, 10.0}) {
        g.lambda = lam;
        const Mat o = cfg_denoise(one, two, Mat::Zero(3, 2), 1.0, g);
        CHECK(o(0, 0) == doctest::Approx(1.0 + lam).epsilon(1e-15));
    }
}

TEST_CASE("combining denoised outputs equals combining scores") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> sig(0.05, 20.0), lam(0.0, 10.0);
    for (int i = 0; i < 200; ++i) {
        const Mat x = random_mat(8, 5, 1000 + i);
        const Mat du = random_mat(8, 5, 2000 + i), dc = random_mat(8, 5, 3000 + i);
        const double s = sig(rng), l = lam(rng);
        const Mat via_d = score_from_denoised(x, combine_guidance(du, dc, l), s);
        const Mat via_score = (1.0 - l) * score_from_denoised(x, du, s) + l * score_from_denoised(x, dc, s);
        CHECK((via_d - via_score).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, via_score.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("guidance config") {
    GuidanceConfig g;
    CHECK_NOTHROW(g.validate());
    g.lambda = std::nan("");
    CHECK_THROWS_AS(g.validate(), InvalidArgument);
    g.lambda = -0.5;
    CHECK_THROWS_AS(g.validate(), InvalidArgument);
    g = GuidanceConfig{};
    g.target_return = 1.5;
    CHECK(g.effective_target() == 1.0);
    g.target_return = -0.2;
    CHECK(g.effective_target() == 0.0);
    g.allow_out_of_range = true;
    CHECK(g.effective_target() == -0.2);
}

TEST_CASE("masked return is the unconditional branch") {
    const auto cfg = fixtures::small_model();
    const auto m = fixtures::random_model(cfg, 7);
    const auto net = make_network(m);
    std::vector<Conditioning> conds = {fixtures::random_conditioning(cfg, 1), fixtures::random_conditioning(cfg, 2)};
    GuidanceConfig g;
    g.lambda = 1.7;
    g.target_return = 0.9;
    GuidedDenoiser gd(m, net, conds, g);
    const Mat x = random_mat(2 * cfg.horizon, cfg.action_dim, 4);
    for (double s : {0.03, 0.5, 4.0}) {
        auto masked = conds;
        for (auto& c : masked) {
            c.return_value.reset();
            c.sigma = s;
        }
        auto target = conds;
        for (auto& c : target) {
            c.return_value = 0.9;
            c.sigma = s;
        }
        const Mat u = denoise_batch(net, m.params, m.sched, x, s, masked);
        const Mat c = denoise_batch(net, m.params, m.sched, x, s, target);
        CHECK(same_bits(gd.unconditional(x, s), u));
        CHECK(same_bits(gd.conditional(x, s), c));
        CHECK(same_bits(gd(x, s), combine_guidance(u, c, 1.7)));
        CHECK_FALSE(same_bits(u, c));
    }
    CHECK(gd.calls() == 12);
    CHECK(gd.warnings().empty());
}

TEST_CASE("guided sampler at lambda 0 and 1 matches plain sampling") {
    const auto cfg = fixtures::small_model();
    const auto m = fixtures::random_model(cfg, 8);
    const auto net = make_network(m);
    const std::vector<Conditioning> conds = {fixtures::random_conditioning(cfg, 5)};
    for (auto kind : {SamplerKind::DDIM, SamplerKind::DDPM, SamplerKind::DPMPP2M}) {
        SamplerConfig sc;
        sc.kind = kind;
        sc.n_steps = 4;
        sc.seed = 99;
        for (double lam : {0.0, 1.0}) {
            GuidanceConfig g;
            g.lambda = lam;
            g.target_return = 0.6;
            const auto guided = guided_sampler(m, net, sc, g, conds);
            auto c = conds;
            if (lam == 0.0)
                c[0].return_value.reset();
            else
                c[0].return_value = 0.6;
            const DenoiseFn plain = [&](const Mat& x, double s) { return denoise_batch(net, m.params, m.sched, x, s, c); };
            const Mat ref = m.norm.denormalize_actions(sample(plain, sc, m.sched, cfg.horizon, cfg.action_dim));
            CHECK(same_bits(guided.actions, ref));
            CHECK(guided.denoiser_calls == 2 * 4);
        }
    }
}

TEST_CASE("two denoiser calls per sampler step") {
    const auto cfg = fixtures::small_model();
    const auto m = fixtures::random_model(cfg, 8);
    const auto net = make_network(m);
    const std::vector<Conditioning> conds = {fixtures::random_conditioning(cfg, 5), fixtures::random_conditioning(cfg, 6)};
    for (int n : {1, 3, 10}) {
        SamplerConfig sc;
        sc.n_steps = n;
        const auto s = guided_sampler(m, net, sc, GuidanceConfig{}, conds);
        CHECK(s.denoiser_calls == static_cast<std::size_t>(2 * n));
        CHECK(s.actions.rows() == 2 * cfg.horizon);
        CHECK(s.actions.allFinite());
    }
}

TEST_CASE("a model trained without masking warns") {
    const auto cfg = fixtures::small_model();
    const auto m = fixtures::random_model(cfg, 8, 0.0);
    const auto net = make_network(m);
    const auto s = guided_sampler(m, net, SamplerConfig{}, GuidanceConfig{}, std::vector{fixtures::random_conditioning(cfg, 1)});
    CHECK_FALSE(s.warnings.empty());
}

}
