#include <doctest.h>

#include <cfgloco/env.hpp>
#include <cfgloco/errors.hpp>

#include <cmath>
#include <numbers>

using namespace cfgloco;

TEST_SUITE("locomotion_env") {

TEST_CASE("zero action from rest only advances the phase") {
    const EnvConfig cfg;
    const EnvState s = rest_state(Skill::Walk, cfg);
    const StepResult r = step(s, Action{}, cfg);
    CHECK(r.state.vx == 0.0);
    CHECK(r.state.vy == 0.0);
    CHECK(r.state.wz == 0.0);
    CHECK(r.state.h == s.h);
    CHECK_FALSE(r.terminated);
    const double adv = 2.0 * std::numbers::pi * cfg.gait_frequency * cfg.dt;
    CHECK(r.state.phase[0] == doctest::Approx(std::fmod(s.phase[0] + adv, 2.0 * std::numbers::pi)));
    CHECK(r.state.phase[1] == doctest::Approx(std::fmod(s.phase[1] + adv, 2.0 * std::numbers::pi)));
}

TEST_CASE("constant acceleration at the bound, applied one step late") {
    const EnvConfig cfg;
    EnvState s = rest_state(Skill::Walk, cfg);
    Action a;
    a.a_vx = 100.0;  // clamped to the bound
    for (int k = 1; k <= 10; ++k) {
        const StepResult r = step(s, a, cfg);
        s = r.state;
        CHECK(s.vx == doctest::Approx((k - 1) * cfg.accel_limit[0] * cfg.dt).epsilon(1e-12));
        CHECK_FALSE(r.terminated);
    }
    const StepResult r = step(s, a, cfg);
    CHECK(r.state.vx > cfg.vx_limit);
    CHECK(r.terminated);
}

TEST_CASE("height outside the band terminates") {
    const EnvConfig cfg;
    EnvState s = rest_state(Skill::Crawl, cfg);
    s.h = 0.14;
    CHECK(is_terminal(s, cfg));
    s.h = 0.81;
    CHECK(is_terminal(s, cfg));
    s.h = 0.3;
    s.vx = -1.6;
    CHECK(is_terminal(s, cfg));

    EnvState low = rest_state(Skill::Crawl, cfg);
    low.h = 0.16;
    low.last_action.a_h = -0.3;
    CHECK(step(low, Action{}, cfg).terminated);
}

TEST_CASE("actions are clamped to their bounds") {
    const EnvConfig cfg;
    const Action c = clamp_action({10, -10, 10, 1, -100}, cfg);
    CHECK(c.a_vx == cfg.accel_limit[0]);
    CHECK(c.a_vy == -cfg.accel_limit[1]);
    CHECK(c.a_wz == cfg.accel_limit[2]);
    CHECK(c.a_h == cfg.height_delta_limit);
    CHECK(c.a_phi == -cfg.phase_rate_limit);
}

TEST_CASE("observation layout") {
    EnvState s;
    s.vx = 0.1;
    s.vy = 0.2;
    s.wz = 0.3;
    s.h = 0.4;
    s.phase[0] = 0.5;
    s.last_action = {1, 2, 3, 0.05, 0.6};
    const Vec o = observe(s);
    REQUIRE(o.size() == kObsDim);
    CHECK(o(0) == 0.1);
    CHECK(o(3) == 0.4);
    CHECK(o(4) == std::sin(0.5));
    CHECK(o(5) == std::cos(0.5));
    EnvState other = s;
    other.last_action = {};
    CHECK((observe(other) - o).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("phase stays wrapped") {
    const EnvConfig cfg;
    EnvState s = rest_state(Skill::Walk, cfg);
    Action a;
    a.a_phi = 6.0;
    for (int i = 0; i < 500; ++i) {
        s = step(s, a, cfg).state;
        for (double p : s.phase) {
            CHECK(p >= 0.0);
            CHECK(p < 2.0 * std::numbers::pi);
        }
    }
}

TEST_CASE("expert at its setpoint only emits the gait term") {
    const EnvConfig cfg;
    EnvState s = rest_state(Skill::Walk, cfg);
    s.vx = 0.3;
    s.vy = -0.2;
    s.wz = 0.5;
    s.phase[0] = 1.0;
    const Action a = expert_action(s, {0.3, -0.2, 0.5}, Skill::Walk, cfg);
    CHECK(a.a_vx == 0.0);
    CHECK(a.a_vy == 0.0);
    CHECK(a.a_wz == 0.0);
    CHECK(a.a_h == 0.0);
    CHECK(a.a_phi == doctest::Approx(cfg.gait_amplitude * std::sin(1.0)));
}

TEST_CASE("walk and crawl experts differ only in the height term") {
    const EnvConfig cfg;
    EnvState s;
    s.vx = 0.1;
    s.h = 0.45;
    s.phase[0] = 2.0;
    const Action w = expert_action(s, {0.8, 0.0, 0.3}, Skill::Walk, cfg);
    const Action c = expert_action(s, {0.8, 0.0, 0.3}, Skill::Crawl, cfg);
    CHECK(w.a_vx == c.a_vx);
    CHECK(w.a_vy == c.a_vy);
    CHECK(w.a_wz == c.a_wz);
    CHECK(w.a_phi == c.a_phi);
    CHECK(w.a_h == doctest::Approx(0.10));
    CHECK(c.a_h == doctest::Approx(-0.15));
}

TEST_CASE("closed-loop expert tracks v_x = 0.8") {
    const EnvConfig cfg;
    for (Skill skill : {Skill::Walk, Skill::Crawl}) {
        EnvState s = rest_state(skill, cfg);
        double worst_tail = 0.0;
        for (int t = 0; t < 250; ++t) {
            const StepResult r = step(s, expert_action(s, {0.8, 0.0, 0.0}, skill, cfg), cfg);
            REQUIRE_FALSE(r.terminated);
            s = r.state;
            if (t >= 200) worst_tail = std::max(worst_tail, std::abs(s.vx - 0.8));
        }
        CHECK(worst_tail < 0.02);
        CHECK(s.h == doctest::Approx(cfg.nominal_height(skill)).epsilon(1e-6));
    }
}

TEST_CASE("skill names") {
    CHECK(parse_skill("walk") == Skill::Walk);
    CHECK(parse_skill("crawl") == Skill::Crawl);
    CHECK(to_string(Skill::Crawl) == "crawl");
    CHECK_THROWS_AS(parse_skill("run"), InvalidArgument);
}

}
