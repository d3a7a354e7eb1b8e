#pragma once
#include <string>
#include <vector>

#include "errors.hpp"
#include "phasor.hpp"

namespace dsopt {

// How the primary-side half of a transformer's series impedance scales with
// the turn ratio r. Linear keeps B'(r) constant, which is what most OLTC
// nameplate data assumes; Squared refers both half-impedances to the primary.
enum class ZpLaw { Linear, Squared };

struct TransformerUnit {
  std::string id;
  double r_series = 0;  // pu on system base
  double x_series = 0;  // pu on system base
  double r_core = 0;    // core-loss resistance, pu (0 = no core branch)
  double x_mag = 0;     // magnetizing reactance, pu (0 = no core branch)
  int tap_min = 0;
  int tap_max = 0;
  double tap_step = 0.01;  // per-unit ratio change per tap position

  Cx z_nameplate() const { return {r_series, x_series}; }
  Cx y_core() const {
    Cx y = 0;
    if (r_core > 0) y += Cx(1.0 / r_core, 0);
    if (x_mag > 0) y += Cx(0, -1.0 / x_mag);
    return y;
  }
};

double turn_ratio(const TransformerUnit& u, double tap);

// ABCD parameters of a two-port: [V_p; I_p] = [a b; c d] [V_s; I_s].
struct TwoPort {
  Cx a{1, 0}, b{0, 0}, c{0, 0}, d{1, 0};
  Cx det() const { return a * d - b * c; }
};

// Two-port of one unit at a given tap, plus its derivative in the tap
// position (chain rule through r = 1 + tap*step).
struct TwoPortSens {
  TwoPort t;
  TwoPort dt;  // element-wise d/dtap
  double ratio = 1.0;
  Cx z_primary{0, 0};    // series impedance ahead of the ideal transformer
  Cx z_secondary{0, 0};  // series impedance behind the core branch
};

TwoPortSens transformer_chain(const TransformerUnit& u, double tap,
                              ZpLaw law = ZpLaw::Linear);

// Pi equivalent. Shunts are stored as admittances so an absent branch is a
// plain zero instead of an infinite impedance.
struct PiModel {
  Cx z_series{0, 0};
  Cx y_shunt_primary{0, 0};
  Cx y_shunt_secondary{0, 0};

  Cx y_series() const {
    if (z_series == Cx(0, 0)) throw NumericError("pi model: zero series impedance");
    return 1.0 / z_series;
  }
  Cx z_shunt_primary() const {
    if (y_shunt_primary == Cx(0, 0))
      throw NumericError("pi model: open primary shunt");
    return 1.0 / y_shunt_primary;
  }
  Cx z_shunt_secondary() const {
    if (y_shunt_secondary == Cx(0, 0))
      throw NumericError("pi model: open secondary shunt");
    return 1.0 / y_shunt_secondary;
  }
};

// Exact pi equivalent of a unit-determinant two-port.
PiModel two_port_pi(const TwoPort& t);

// Parallel combination: branch-wise admittance sums.
PiModel aggregate_parallel(const std::vector<PiModel>& branches);

// Aggregate pi admittances of a parallel transformer bank together with the
// per-unit-tap sensitivities of each branch admittance.
struct BankAggregate {
  Cx y_sr{0, 0};  // series
  Cx y_pp{0, 0};  // shunt, primary side
  Cx y_ss{0, 0};  // shunt, secondary side
  std::vector<Cx> dy_sr, dy_pp, dy_ss;  // d/dtap_t, one entry per unit
};

struct Network;  // fwd

BankAggregate aggregate_bank(const std::vector<TransformerUnit>& units,
                             const Vec& taps, ZpLaw law);

// ABCD of the aggregated bank plus d/dtap_t for every unit.
struct Transmission {
  Eigen::Matrix2cd t;
  std::vector<Eigen::Matrix2cd> dt_dtap;
};

Transmission transmission_matrix(const std::vector<TransformerUnit>& units,
                                 const Vec& taps,
                                 ZpLaw law = ZpLaw::Linear);

// Current the upstream system injects into the head bus once the source and
// the bank's internal node are eliminated: I_head = c*V_head + d*V_source.
struct UpstreamMaps {
  Cx c{0, 0};
  Cx d{0, 0};
  std::vector<Cx> dc_dtap, dd_dtap;  // one entry per transformer unit
};

struct CapacitorBank {
  std::string id;
  int bus = -1;
  double y_step = 0;  // susceptance added per step, pu
  int step_min = 0;
  int step_max = 0;
};

enum class DeviceKind { Der, Svr, Pv, Wind };
enum class DeviceMode { PowerControl, VoltageControl };

struct ContinuousDevice {
  std::string id;
  int bus = -1;
  DeviceKind kind = DeviceKind::Der;
  DeviceMode mode = DeviceMode::PowerControl;
  double s_max = 0;            // apparent power rating, pu
  double price = 0;            // generation price, currency per MWh
  double power_angle_deg = 0;  // max |angle(P,Q)| for Der/Pv (0 = none)
  double q_min = 0;            // reactive floor for Wind (<= 0)
  double p_available = 0;      // non-dispatchable active power (Pv/Wind)

  bool dispatchable_p() const { return kind == DeviceKind::Der; }
  bool has_angle_limit() const {
    return (kind == DeviceKind::Der || kind == DeviceKind::Pv) &&
           power_angle_deg > 0;
  }
};

// Load mix: fraction z at constant impedance, i at constant current,
// p at constant power. Must sum to 1.
struct ZipShares {
  double z = 0, i = 0, p = 1;
};

// Constant-current share folded into the impedance share: the two-parameter
// mix that matches value and slope of the three-parameter one at v = v0.
double zp_share(const ZipShares& s);

// Demand of a two-parameter load at voltage magnitude v (pu of its own v0).
double zp_load_power(double p_nominal, double zp, double v_ratio);

struct Bus {
  std::string name;
  double p_load = 0;  // nominal demand at v0, pu
  double q_load = 0;
  double v0 = 1.0;  // magnitude at which the nominal demand is quoted
};

struct Line {
  int from = -1, to = -1;
  double r = 0, x = 0;
  double b_shunt = 0;  // total line charging susceptance, pu
  double i_max = 0;    // ampacity, pu (0 = unlimited)
  Cx z() const { return {r, x}; }
};

struct UpstreamThevenin {
  Cx v_source{1, 0};
  Cx z{0, 0};
};

struct Network {
  std::string name;
  double s_base_mva = 100;
  double v_base_kv = 0;
  std::vector<Bus> buses;  // buses[0] is the head (transformer secondary)
  std::vector<Line> lines;
  std::vector<TransformerUnit> transformers;
  std::vector<CapacitorBank> caps;
  std::vector<ContinuousDevice> devices;
  ZipShares zip_p, zip_q;
  UpstreamThevenin upstream;
  double v_min = 0.95, v_max = 1.05;
  ZpLaw zp_law = ZpLaw::Linear;

  int head() const { return 0; }
  int bus_index(const std::string& name) const;  // -1 if absent
  void validate() const;  // throws ValidationError
};

UpstreamMaps upstream_injection_maps(const Network& net,
                                     const Vec& taps);

// Complex nodal admittance matrix: lines plus the head-bus term of the
// eliminated upstream branch (the -c coefficient of the head injection).
CMat bus_admittance(const Network& net, const Vec& taps);

// Real stacked form of a complex matrix: [Re -Im; Im Re] acting on [x; y].
Mat stack_real(const CMat& y);

// Capacitor bank injection at a given step count: I = -j*step*y_step*V.
inline Cx cb_injection(double step, double y_step, Cx v) {
  return Cx(0, -step * y_step) * v;
}

}  // namespace dsopt
