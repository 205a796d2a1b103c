#include <doctest.h>

#include <cfgloco/diffusion.hpp>
#include <cfgloco/errors.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace cfgloco;

TEST_SUITE("diffusion_core") {

TEST_CASE("karras grid endpoints") {
    SigmaSchedule s;
    const auto one = karras_sigma_grid(1, s);
    REQUIRE(one.size() == 2);
    CHECK(one[0] == 80.0);
    CHECK(one[1] == 0.0);

    SigmaSchedule lin;
    lin.sigma_min = 1.0;
    lin.sigma_max = 3.0;
    lin.rho = 1.0;
    const auto g = karras_sigma_grid(3, lin);
    REQUIRE(g.size() == 4);
    CHECK(g[0] == 3.0);
    CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(g[2] == 1.0);
    CHECK(g[3] == 0.0);
}

TEST_CASE("karras grid middle value at rho 7") {
    const auto g = karras_sigma_grid(3, SigmaSchedule{});
    CHECK(g[1] == doctest::Approx(4.045647250607925702559795).epsilon(1e-13));
    CHECK(g[2] == 0.02);
}

TEST_CASE("karras grid rejects non-positive step counts") {
    CHECK_THROWS_AS(karras_sigma_grid(0, SigmaSchedule{}), InvalidArgument);
    CHECK_THROWS_AS(karras_sigma_grid(-3, SigmaSchedule{}), InvalidArgument);
}

TEST_CASE("karras grid is strictly decreasing and ends at zero") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        SigmaSchedule s;
        s.sigma_min = std::exp(std::log(1e-3) + u(rng) * std::log(1e3));
        s.sigma_max = 2.0 + 98.0 * u(rng);
        s.rho = 0.5 + 9.5 * u(rng);
        const int n = 1 + static_cast<int>(u(rng) * 50);
        const auto g = karras_sigma_grid(n, s);
        REQUIRE(g.size() == static_cast<std::size_t>(n) + 1);
        CHECK(g.front() == s.sigma_max);
        CHECK(g.back() == 0.0);
        if (n >= 2) CHECK(g[static_cast<std::size_t>(n) - 1] == s.sigma_min);
        for (std::size_t i = 0; i + 1 < g.size(); ++i) CHECK(g[i] > g[i + 1]);
    }
}

TEST_CASE("preconditioning scalars") {
    SigmaSchedule s;
    s.sigma_data = 0.5;
    const auto zero = precondition(0.0, s);
    CHECK(zero.c_skip == 1.0);
    CHECK(zero.c_out == 0.0);
    CHECK(zero.c_in == 2.0);

    const auto sym = precondition(0.5, s);
    CHECK(sym.c_skip == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sym.c_out == doctest::Approx(0.3535533905932737622).epsilon(1e-15));
    CHECK(sym.c_in == doctest::Approx(1.4142135623730950488).epsilon(1e-15));
    CHECK(sym.c_noise == doctest::Approx(-0.17328679513998632735).epsilon(1e-15));

    const auto two = precondition(2.0, s);
    CHECK(two.c_skip == doctest::Approx(0.058823529411764705882).epsilon(1e-15));
    CHECK(two.c_in == doctest::Approx(0.48507125007266594704).epsilon(1e-15));
    CHECK(two.c_out == doctest::Approx(0.48507125007266594704).epsilon(1e-15));
}

TEST_CASE("preconditioning limits and finiteness over the schedule range") {
    SigmaSchedule s;
    const auto tiny = precondition(1e-9, s);
    CHECK(tiny.c_skip == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(tiny.c_out < 1e-8);
    for (double sigma = s.sigma_min; sigma <= s.sigma_max; sigma *= 1.1) {
        const auto p = precondition(sigma, s);
        CHECK(std::isfinite(p.c_skip));
        CHECK(std::isfinite(p.c_out));
        CHECK(std::isfinite(p.c_in));
        CHECK(std::isfinite(p.c_noise));
    }
}

TEST_CASE("loss weight makes the implied network target unit scale") {
    SigmaSchedule s;
    s.sigma_data = 0.7;
    for (double sigma : {0.02, 0.3, 1.0, 7.0, 80.0}) {
        const auto p = precondition(sigma, s);
        CHECK(loss_weight(sigma, s) * p.c_out * p.c_out == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("denoise with a zero network is c_skip x") {
    SigmaSchedule s;
    s.sigma_data = 0.5;
    const NetworkFn zero = [](const Mat& x, double) { return Mat::Zero(x.rows(), x.cols()).eval(); };
    Mat x(3, 2);
    x << 1, -2, 0.5, 3, -1, 4;
    for (double sigma : {0.02, 0.5, 2.0, 80.0}) {
        const Mat d = denoise(zero, x, sigma, s);
        CHECK((d - precondition(sigma, s).c_skip * x).cwiseAbs().maxCoeff() <= 1e-15 * x.cwiseAbs().maxCoeff());
    }
    const Mat d_small = denoise(zero, x, s.sigma_min, s);
    CHECK((d_small - x).cwiseAbs().maxCoeff() < 2e-3 * x.cwiseAbs().maxCoeff());
}

TEST_CASE("denoise with an all-ones network at sigma_data and x = 0") {
    SigmaSchedule s;
    s.sigma_data = 0.5;
    const NetworkFn ones = [](const Mat& x, double) { return Mat::Ones(x.rows(), x.cols()).eval(); };
    const Mat d = denoise(ones, Mat::Zero(4, 5), 0.5, s);
    CHECK(d.minCoeff() == doctest::Approx(0.3535533905932737622).epsilon(1e-15));
    CHECK(d.maxCoeff() == d.minCoeff());
}

TEST_CASE("denoise input validation") {
    SigmaSchedule s;
    const NetworkFn id = [](const Mat& x, double) { return x; };
    Mat bad = Mat::Zero(2, 2);
    bad(1, 1) = std::nan("");
    CHECK_THROWS_AS(denoise(id, bad, 1.0, s), NumericInputError);
    bad(1, 1) = INFINITY;
    CHECK_THROWS_AS(denoise(id, bad, 1.0, s), NumericInputError);
    CHECK_THROWS_AS(denoise(id, Mat::Zero(2, 2), 0.0, s), InvalidArgument);
    CHECK_THROWS_AS(denoise(id, Mat::Zero(2, 2), 81.0, s), InvalidArgument);
}

TEST_CASE("score from denoised") {
    Mat x(1, 1), d(1, 1);
    x << 2.0;
    d << 1.0;
    CHECK(score_from_denoised(x, d, 1.0)(0, 0) == -1.0);
    CHECK(score_from_denoised(x, x, 0.3)(0, 0) == 0.0);
    CHECK_THROWS_AS(score_from_denoised(x, d, 0.0), InvalidArgument);
}

TEST_CASE("score and denoiser are algebraic inverses") {
    SigmaSchedule s;
    s.sigma_data = 0.5;
    const NetworkFn net = [](const Mat& x, double sigma) {
        return (x.array().tanh() + 0.1 * std::log(sigma)).matrix().eval();
    };
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double sigma = std::exp(std::log(s.sigma_min) + u(rng) * std::log(s.sigma_max / s.sigma_min));
        Mat x(4, 3);
        for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = sigma * n(rng);
        const Mat d = denoise(net, x, sigma, s);
        const Mat back = score_from_denoised(x, d, sigma) * sigma * sigma + x;
        worst = std::max(worst, (back - d).cwiseAbs().maxCoeff() / std::max(1.0, d.cwiseAbs().maxCoeff()));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("optimal Gaussian denoiser yields the perturbed Gaussian score") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const double sd = 0.5;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double sigma = 0.02 + 10.0 * u(rng);
        Mat x(2, 3);
        for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = 3.0 * n(rng);
        const Mat d = x * (sd * sd / (sd * sd + sigma * sigma));
        const Mat analytic = -x / (sd * sd + sigma * sigma);
        worst = std::max(worst, (score_from_denoised(x, d, sigma) - analytic).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
}

namespace {
NoisedBatch fixed_batch() {
    NoisedBatch b;
    const double sigmas[3] = {0.3, 1.0, 3.0};
    for (int k = 0; k < 3; ++k) {
        Mat y(2, 2), n(2, 2);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                y(i, j) = std::sin(1.0 + k + i / 2.0 + j / 4.0);
                n(i, j) = sigmas[k] * std::cos(2.0 * k + i - j);
            }
        b.clean.push_back(y);
        b.noise.push_back(n);
        b.sigma.push_back(sigmas[k]);
    }
    return b;
}
}  // namespace

TEST_CASE("dsm loss trivial cases") {
    SigmaSchedule s;
    NoisedBatch b;
    b.clean.push_back(Mat::Constant(2, 3, 0.4));
    b.noise.push_back(Mat::Zero(2, 3));
    b.sigma.push_back(0.02);
    const BatchDenoiseFn identity = [](std::size_t, const Mat& x, double) { return x; };
    CHECK(dsm_loss(identity, b, s) == 0.0);

    // sigma_data = 2, sigma^2 = 4/3 gives unit weight
    SigmaSchedule unit;
    unit.sigma_data = 2.0;
    b.sigma[0] = std::sqrt(4.0 / 3.0);
    const BatchDenoiseFn off_by_e1 = [&](std::size_t, const Mat&, double) {
        Mat d = b.clean[0];
        d(0, 0) += 1.0;
        return d;
    };
    CHECK(dsm_loss(off_by_e1, b, unit) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("dsm loss of a zeroed network matches the recomputed value") {
    SigmaSchedule s;
    s.sigma_data = 0.5;
    const NetworkFn zero = [](const Mat& x, double) { return Mat::Zero(x.rows(), x.cols()).eval(); };
    const BatchDenoiseFn d = [&](std::size_t, const Mat& x, double sigma) { return denoise(zero, x, sigma, s); };
    CHECK(dsm_loss(d, fixed_batch(), s) == doctest::Approx(3.332067772177998631137722).epsilon(1e-13));
}

TEST_CASE("dsm loss is invariant under batch permutation") {
    SigmaSchedule s;
    s.sigma_data = 0.5;
    const NetworkFn net = [](const Mat& x, double sigma) { return (0.3 * x.array().sin() + sigma).matrix().eval(); };
    const BatchDenoiseFn d = [&](std::size_t, const Mat& x, double sigma) { return denoise(net, x, sigma, s); };
    const NoisedBatch b = fixed_batch();
    NoisedBatch p;
    for (std::size_t i : {2u, 0u, 1u}) {
        p.clean.push_back(b.clean[i]);
        p.noise.push_back(b.noise[i]);
        p.sigma.push_back(b.sigma[i]);
    }
    CHECK(dsm_loss(d, p, s) == doctest::Approx(dsm_loss(d, b, s)).epsilon(1e-15));
    CHECK(dsm_loss(d, b, s) >= 0.0);
}

TEST_CASE("dsm loss validation") {
    const BatchDenoiseFn identity = [](std::size_t, const Mat& x, double) { return x; };
    CHECK_THROWS_AS(dsm_loss(identity, NoisedBatch{}, SigmaSchedule{}), InvalidArgument);
    NoisedBatch b;
    b.clean.push_back(Mat::Zero(2, 2));
    b.noise.push_back(Mat::Zero(3, 2));
    b.sigma.push_back(1.0);
    CHECK_THROWS_AS(dsm_loss(identity, b, SigmaSchedule{}), InvalidArgument);
}

TEST_CASE("training sigma: degenerate scale returns exp(location)") {
    SigmaSchedule s;
    s.train_dist = {std::log(0.7), 0.0};
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) CHECK(sample_training_sigma(rng, s) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("training sigma: median, clamp and determinism") {
    const auto s = SigmaSchedule::for_data_std(0.5);
    CHECK(s.train_dist.location == doctest::Approx(std::log(0.5)));
    CHECK(s.train_dist.scale == 0.5);
    std::mt19937_64 rng(11);
    std::vector<double> draws(100000);
    for (auto& d : draws) d = sample_training_sigma(rng, s);
    CHECK(*std::min_element(draws.begin(), draws.end()) >= s.sigma_min);
    CHECK(*std::max_element(draws.begin(), draws.end()) <= s.sigma_max);
    std::nth_element(draws.begin(), draws.begin() + 50000, draws.end());
    CHECK(std::abs(draws[50000] / 0.5 - 1.0) < 0.02);

    std::mt19937_64 a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(sample_training_sigma(a, s) == sample_training_sigma(b, s));
}

TEST_CASE("schedule validation") {
    SigmaSchedule s;
    s.sigma_min = 100.0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = SigmaSchedule{};
    s.sigma_data = 0.0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = SigmaSchedule{};
    s.train_dist.scale = -1.0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

}
