#pragma once

#include <string>
#include <vector>

#include "sonostate/rng.hpp"

namespace sono::protocol {

enum class Task { isometric, passive, combined };

Task task_from_string(const std::string& s);
std::string to_string(Task t);

// Excitation bases, all bounded in [-1, 1]:
//   a = sin(0.4 t pi - pi/2)   (period 5 s)
//   b = sin(0.5 t pi - pi/2)   (period 4 s)
//   c = sin(sin(t pi/30 - pi/2) * 30 pi - pi/2)
double base_signal(char name, double t);

// Piecewise base assignment over one trial. The first neutral_len seconds
// hold the baseline value (-1); the remaining time is split into left-closed
// segments of seg_len seconds alternating bases a and b, except that the
// segment starting at each positive multiple of c_period uses c. The a/b
// alternation counts non-c segments only, and bases take trial-relative time.
struct SignalSchedule {
    Task task = Task::combined;
    double duration = 190.0;
    double neutral_len = 10.0;
    double seg_len = 10.0;
    double c_period = 30.0;
    bool forced_neutral = false;

    char base_at(double trial_tau) const;  // 'a', 'b', 'c' or 'n'
    double value(double t) const;          // t in [0, duration)
};

struct Schedules {
    SignalSchedule activity;  // 10 s segments, c every 30 s
    SignalSchedule rotation;  // 20 s segments, c every 60 s
};

Schedules build_schedules(Task task, double duration = 190.0);

// Absolute muscle state attached to one frame.
struct StateLabel {
    double emg_gm = 0;  // mV
    double emg_so = 0;  // mV
    double moment = 0;  // Nm
    double angle = 0;   // deg, plantarflexion positive
};

struct TrialConfig {
    double duration = 190.0;
    double fs = 25.0;

    double emg_gm_gain = 14.0;   // mV at full drive
    double emg_so_gain = 10.0;
    double emg_gm_base = 0.35;   // resting tone, mV
    double emg_so_base = 0.30;
    double so_coupling = 0.65;   // SO drive = coupling * GM drive

    double angle_lo = 1.0;   // deg at rotation baseline
    double angle_hi = 13.0;  // deg at rotation peak

    double moment_base = 12.0;       // Nm at rest
    double moment_act_gain = 42.0;   // Nm at full drive
    double moment_angle_gain = 1.1;  // Nm per deg of plantarflexion

    // AR(1) measurement noise per channel (stationary std)
    double emg_noise = 0.02;
    double moment_noise = 0.15;
    double angle_noise = 0.03;
    double noise_smooth = 0.6;
};

struct TrialLabels {
    Task task = Task::combined;
    double fs = 25.0;
    std::vector<StateLabel> labels;
    std::vector<double> activity;  // clean GM drive in [0, 1], target of rendering
    std::vector<double> angle;     // clean angle in deg, target of rendering

    std::size_t frames() const { return labels.size(); }
};

// Renders the task schedules into a 25 Hz label series plus the clean
// (activity, angle) inputs that drive the phantom.
TrialLabels compose_trial(Task task, const TrialConfig& cfg, Rng& rng);

}  // namespace sono::protocol
