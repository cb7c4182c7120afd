#include "sonostate/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sono::protocol {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Task task_from_string(const std::string& s) {
    if (s == "isometric") return Task::isometric;
    if (s == "passive") return Task::passive;
    if (s == "combined") return Task::combined;
    throw std::invalid_argument("unknown task '" + s + "'");
}

std::string to_string(Task t) {
    switch (t) {
        case Task::isometric: return "isometric";
        case Task::passive: return "passive";
        case Task::combined: return "combined";
    }
    return "?";
}

double base_signal(char name, double t) {
    switch (name) {
        case 'a': return std::sin(0.4 * t * kPi - kPi / 2);
        case 'b': return std::sin(0.5 * t * kPi - kPi / 2);
        case 'c': return std::sin(std::sin(t * kPi / 30 - kPi / 2) * 30 * kPi - kPi / 2);
        case 'n': return -1.0;
        default: throw std::invalid_argument(std::string("unknown base signal '") + name + "'");
    }
}

char SignalSchedule::base_at(double trial_tau) const {
    if (forced_neutral || trial_tau < 0) return 'n';
    const long k = long(trial_tau / seg_len);
    const long per = long(c_period / seg_len + 0.5);
    if (k > 0 && k % per == 0) return 'c';
    // a/b parity over non-c segments only
    const long c_before = k > 0 ? (k - 1) / per : 0;
    const long ab_index = k - c_before;
    return ab_index % 2 == 0 ? 'a' : 'b';
}

double SignalSchedule::value(double t) const {
    if (forced_neutral || t < neutral_len) return -1.0;
    const double tau = t - neutral_len;
    return base_signal(base_at(tau), tau);
}

Schedules build_schedules(Task task, double duration) {
    if (duration < 10.0) throw std::invalid_argument("trial duration must be >= 10 s");
    Schedules s;
    s.activity = SignalSchedule{task, duration, 10.0, 10.0, 30.0, task == Task::passive};
    s.rotation = SignalSchedule{task, duration, 10.0, 20.0, 60.0, task == Task::isometric};
    return s;
}

TrialLabels compose_trial(Task task, const TrialConfig& cfg, Rng& rng) {
    if (!std::isfinite(cfg.angle_lo) || !std::isfinite(cfg.angle_hi) ||
        !std::isfinite(cfg.emg_gm_gain))
        throw std::invalid_argument("compose_trial: ranges must be finite");
    const auto sched = build_schedules(task, cfg.duration);
    const std::size_t n = std::size_t(cfg.duration * cfg.fs + 0.5);

    TrialLabels out;
    out.task = task;
    out.fs = cfg.fs;
    out.labels.resize(n);
    out.activity.resize(n);
    out.angle.resize(n);

    // AR(1) noise streams; stationary std equals the configured level
    const double a = std::clamp(cfg.noise_smooth, 0.0, 0.999);
    const double inject = std::sqrt(1.0 - a * a);
    double n_gm = 0, n_so = 0, n_mom = 0, n_ang = 0;

    for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / cfg.fs;
        const double act = (sched.activity.value(t) + 1.0) / 2.0;  // [0, 1]
        const double rot = (sched.rotation.value(t) + 1.0) / 2.0;
        const double angle = cfg.angle_lo + rot * (cfg.angle_hi - cfg.angle_lo);

        n_gm = a * n_gm + inject * rng.normal();
        n_so = a * n_so + inject * rng.normal();
        n_mom = a * n_mom + inject * rng.normal();
        n_ang = a * n_ang + inject * rng.normal();

        StateLabel& l = out.labels[i];
        l.emg_gm = std::max(1e-3, cfg.emg_gm_base + cfg.emg_gm_gain * act + cfg.emg_noise * n_gm);
        l.emg_so = std::max(1e-3, cfg.emg_so_base + cfg.emg_so_gain * cfg.so_coupling * act +
                                      cfg.emg_noise * n_so);
        l.moment = cfg.moment_base + cfg.moment_act_gain * act - cfg.moment_angle_gain * angle +
                   cfg.moment_noise * n_mom;
        l.angle = angle + cfg.angle_noise * n_ang;
        out.activity[i] = act;
        out.angle[i] = angle;
    }
    return out;
}

}  // namespace sono::protocol
