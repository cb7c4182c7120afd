#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sonostate/protocol.hpp"
#include "sonostate/stats.hpp"

using namespace sono;
using namespace sono::protocol;

TEST_CASE("base signals start at -1") {
    CHECK(base_signal('a', 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(base_signal('b', 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(base_signal('c', 0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("base a phase arithmetic and period") {
    CHECK(base_signal('a', 1.25) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(base_signal('a', 2.5) == doctest::Approx(1.0).epsilon(1e-12));
    for (double t = 0; t < 20; t += 0.37) {
        CHECK(std::fabs(base_signal('a', t) - base_signal('a', t + 5.0)) < 1e-9);
        CHECK(std::fabs(base_signal('b', t) - base_signal('b', t + 4.0)) < 1e-9);
    }
}

TEST_CASE("base c direct evaluation at inner zero crossing") {
    CHECK(base_signal('c', 15.0) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("base signals bounded in [-1,1]") {
    for (double t = 0; t < 180; t += 0.0173) {
        for (char n : {'a', 'b', 'c'}) {
            CHECK(base_signal(n, t) <= 1.0);
            CHECK(base_signal(n, t) >= -1.0);
        }
    }
}

TEST_CASE("unknown base name rejected") {
    CHECK_THROWS_AS(base_signal('z', 0.0), std::invalid_argument);
}

TEST_CASE("activity schedule: first segments a then b, c at 30 s multiples") {
    auto s = build_schedules(Task::combined, 190.0);
    CHECK(s.activity.base_at(0.0) == 'a');
    CHECK(s.activity.base_at(9.99) == 'a');
    CHECK(s.activity.base_at(10.0) == 'b');
    CHECK(s.activity.base_at(20.0) == 'a');
    CHECK(s.activity.base_at(30.0) == 'c');
    CHECK(s.activity.base_at(60.0) == 'c');
    CHECK(s.activity.base_at(150.0) == 'c');
    // alternation continues over non-c segments
    CHECK(s.activity.base_at(40.0) == 'b');
    CHECK(s.activity.base_at(50.0) == 'a');
    CHECK(s.activity.base_at(70.0) == 'b');
}

TEST_CASE("rotation schedule: 20 s segments, c at 60 s multiples") {
    auto s = build_schedules(Task::combined, 190.0);
    CHECK(s.rotation.base_at(0.0) == 'a');
    CHECK(s.rotation.base_at(20.0) == 'b');
    CHECK(s.rotation.base_at(40.0) == 'a');
    CHECK(s.rotation.base_at(60.0) == 'c');
    CHECK(s.rotation.base_at(80.0) == 'b');
    CHECK(s.rotation.base_at(100.0) == 'a');
    CHECK(s.rotation.base_at(120.0) == 'c');
}

TEST_CASE("neutral hold covers the first 10 s") {
    auto s = build_schedules(Task::combined, 190.0);
    for (double t = 0; t < 10.0; t += 0.25) {
        CHECK(s.activity.value(t) == -1.0);
        CHECK(s.rotation.value(t) == -1.0);
    }
    // continuous at the handover: a(0) = -1
    CHECK(s.activity.value(10.0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("passive forces activity neutral; isometric forces rotation neutral") {
    auto p = build_schedules(Task::passive, 190.0);
    auto i = build_schedules(Task::isometric, 190.0);
    for (double t = 0; t < 190; t += 1.7) {
        CHECK(p.activity.value(t) == -1.0);
        CHECK(i.rotation.value(t) == -1.0);
    }
    // the other signal still runs
    CHECK(p.rotation.value(35.0) != -1.0);
}

TEST_CASE("combined schedules reproduce the published signal correlation") {
    auto s = build_schedules(Task::combined, 190.0);
    std::vector<double> act, rot;
    for (int i = 0; i < 4500; ++i) {
        const double t = 10.0 + double(i) / 25.0;
        act.push_back(s.activity.value(t));
        rot.push_back(s.rotation.value(t));
    }
    const double p = stats::pearson(act, rot);
    const double sp = stats::spearman(act, rot);
    CHECK(std::fabs(p - 0.33) <= 0.05);
    CHECK(std::fabs(sp - 0.34) <= 0.05);
}

TEST_CASE("compose_trial: frame count and determinism") {
    TrialConfig cfg;
    Rng r1(77), r2(77);
    auto t1 = compose_trial(Task::passive, cfg, r1);
    auto t2 = compose_trial(Task::passive, cfg, r2);
    CHECK(t1.frames() == 4750);
    REQUIRE(t1.frames() == t2.frames());
    for (std::size_t i = 0; i < t1.frames(); ++i) {
        CHECK(t1.labels[i].emg_gm == t2.labels[i].emg_gm);
        CHECK(t1.labels[i].angle == t2.labels[i].angle);
    }
}

TEST_CASE("passive trial: no drive, angle follows the rotation schedule") {
    TrialConfig cfg;
    Rng rng(5);
    auto t = compose_trial(Task::passive, cfg, rng);
    double max_emg = 0, max_act = 0;
    for (std::size_t i = 0; i < t.frames(); ++i) {
        max_emg = std::max(max_emg, t.labels[i].emg_gm);
        max_act = std::max(max_act, t.activity[i]);
    }
    CHECK(max_act == 0.0);
    // resting tone plus noise only, far below the active-trial ceiling
    CHECK(max_emg < cfg.emg_gm_base + 6 * cfg.emg_noise);
    // angle sweeps the configured range
    double lo = 1e9, hi = -1e9;
    for (double a : t.angle) {
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    CHECK(lo == doctest::Approx(cfg.angle_lo).epsilon(0.01));
    CHECK(hi == doctest::Approx(cfg.angle_hi).epsilon(0.01));
}

TEST_CASE("zero activity and zero angle give baseline moment") {
    TrialConfig cfg;
    cfg.angle_lo = cfg.angle_hi = 0.0;
    cfg.emg_noise = cfg.moment_noise = cfg.angle_noise = 0.0;
    Rng rng(9);
    auto t = compose_trial(Task::passive, cfg, rng);
    for (std::size_t i = 0; i < t.frames(); ++i) {
        CHECK(t.labels[i].moment == doctest::Approx(cfg.moment_base).epsilon(1e-12));
        CHECK(t.labels[i].angle == 0.0);
    }
}

TEST_CASE("default gains keep labels inside the published extrema") {
    TrialConfig cfg;
    Rng rng(13);
    for (Task task : {Task::combined, Task::passive, Task::isometric}) {
        auto t = compose_trial(task, cfg, rng);
        for (const auto& l : t.labels) {
            CHECK(l.angle >= -9.32);
            CHECK(l.angle <= 13.79);
            CHECK(l.moment >= -14.77);
            CHECK(l.moment <= 94.35);
            CHECK(l.emg_gm >= 0.0);
            CHECK(l.emg_gm <= 50.21);
            CHECK(l.emg_so <= 89.58);
        }
    }
}

TEST_CASE("schedule segments are left-closed at boundaries") {
    auto s = build_schedules(Task::combined, 190.0);
    // value at exactly t=40 s (trial tau 30) must use the new segment's base c
    const double tau = 30.0;
    CHECK(s.activity.value(10.0 + tau) == doctest::Approx(base_signal('c', tau)).epsilon(1e-12));
}
