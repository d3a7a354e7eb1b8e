#pragma once

#include <array>
#include <functional>
#include <vector>

#include "perturbed.hpp"

namespace dsopt {

// One metering sample at the feeder's primary port: voltage magnitude,
// current magnitude, and the current's angle relative to the voltage (all
// per-unit / radians). The port's absolute angle is unobservable, which is
// why three samples under different loadings are needed.
struct PortSnapshot {
  double v_mag = 0;
  double i_mag = 0;
  double phi = 0;
};

struct TheveninEstimate {
  double v_th = 0;
  double z_mag = 0;
  double z_arg = 0;
  double residual = 0;  // magnitude mismatch between the three back-outs
  int iterations = 0;
  Cx z() const { return std::polar(z_mag, z_arg); }
};

// Recovers the source voltage and series impedance seen from the primary
// port out of three snapshots, using V_th = V_p + Z_th I_p per sample.
// Throws ConditioningError when the samples are too similar to separate the
// unknowns or the iteration fails to close.
TheveninEstimate estimate_thevenin(const std::array<PortSnapshot, 3>& snaps);

// Reaction to a suspected change in the upstream grid. Steps: (1) sample
// once and back out a provisional source voltage holding the old impedance;
// (2) walk toward the scheduled controls by the two moves with the smallest
// predicted cost impact, sampling after each, so the three samples differ;
// (3) re-estimate from scratch; (4) flag a reschedule when the estimate
// moved beyond the thresholds. `measure` applies a control vector to the
// feeder and returns the port sample.
struct UpstreamUpdate {
  TheveninEstimate estimate;
  double v_th_quick = 0;   // step-1 value, old impedance held
  bool full_estimate = false;  // false when no controls were free to move
  bool reschedule = false;
  std::vector<int> moves_applied;  // control indices, in application order
  Vec w_final;                     // controls after the probing moves
};

UpstreamUpdate update_upstream(
    const UpstreamThevenin& previous, const Vec& w_now, const Vec& w_scheduled,
    const ObjectiveModel& obj, const Vec& anchor_w,
    const std::function<PortSnapshot(const Vec&)>& measure, double eps_v = 5e-3,
    double eps_z = 5e-3);

// Demand-model refresh for one bus from two voltage/power samples. The
// voltage-dependent demand p(v) = p0 (s (v/v0)^2 + 1 - s) is linear in
// (p0, p0 s), so two samples at different voltages pin both down.
struct LoadSnapshot {
  double v_mag = 0;
  double p = 0;
};

struct LoadParamUpdate {
  double p0 = 0;
  double share = 0;  // voltage-dependent fraction, clipped into [0, 1]
  bool clipped = false;
  bool reschedule = false;
};

LoadParamUpdate update_load_params(double v0, const LoadSnapshot& s1,
                                   const LoadSnapshot& s2, double p0_prev,
                                   double share_prev, double change_tol = 0.02);

}  // namespace dsopt
