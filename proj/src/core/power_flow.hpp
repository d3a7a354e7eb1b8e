#pragma once
#include <string>
#include <vector>

#include "network.hpp"

namespace dsopt {

// Demand model the solver believes in. Kept separate from the Network so a
// scenario can optimize against one model while the feeder follows another.
struct LoadView {
  Vec p0, q0;  // nominal demand at v0, per bus
  Vec v0;
  double zp_p = 1.0;  // voltage-dependent share of active demand
  double zp_q = 1.0;

  static LoadView from(const Network& net);
  double active(int bus, double vmag) const;
  double reactive(int bus, double vmag) const;
};

// Flat control vector: integer positions first (taps, then capacitor
// steps), then the continuous device set-points in declaration order.
struct ControlEntry {
  enum class Kind { Tap, CbStep, P, Q, Vset };
  Kind kind = Kind::Tap;
  int element = -1;  // index into transformers / caps / devices
  std::string name;
  double lo = 0, hi = 0;
  bool is_integer = false;
  double trust_weight = 1.0;
};

struct ControlLayout {
  std::vector<ControlEntry> entries;
  int n_integer = 0;

  static ControlLayout build(const Network& net);

  int size() const { return static_cast<int>(entries.size()); }
  int tap_pos(int unit) const;
  int cb_pos(int cap) const;
  int device_pos(int device, ControlEntry::Kind kind) const;  // -1 if absent

  std::vector<int> taps(const Vec& w) const;      // rounded, for reporting
  std::vector<int> cb_steps(const Vec& w) const;  // rounded, for reporting
  Vec tap_values(const Vec& w) const;  // as stored; fractional while relaxed
  Vec lower() const;
  Vec upper() const;
  Vec trust_weights() const;
  Vec clamp(const Vec& w) const;

  // Throws ValidationError if an entry is outside its bounds; integer slots
  // may hold fractional values (relaxed solves), unless require_integral.
  void check(const Vec& w, double tol = 1e-6,
             bool require_integral = false) const;
};

struct PfOptions {
  double tol = 1e-11;     // infinity norm of the mismatch
  int max_iter = 50;
  int max_damping = 4;    // step halvings per iteration
};

struct OperatingPoint {
  CVec v;        // bus voltages
  Vec w;         // controls this point was solved at
  Vec q_g_vc;    // reactive output of voltage-controlled devices, by device index
  CVec i_injected;  // net injected current per bus (includes the upstream feed)
  CVec i_line;      // series current per line, from-end

  Cx v_primary{0, 0}, i_primary{0, 0};  // transformer primary port
  double p_upstream = 0, q_upstream = 0;

  std::vector<double> tr_copper, tr_core;  // per transformer unit
  double loss_tr_copper = 0, loss_tr_core = 0, loss_line_copper = 0;
  double total_loss() const {
    return loss_tr_copper + loss_tr_core + loss_line_copper;
  }

  double p_load_total = 0, q_load_total = 0;
  double p_gen_total = 0, q_gen_total = 0;  // device output (not the grid feed)
  int newton_iters = 0;

  double device_p(const Network& net, const ControlLayout& lay, int dev) const;
  double device_q(const Network& net, const ControlLayout& lay, int dev) const;
};

OperatingPoint solve_power_flow(const Network& net, const LoadView& loads,
                                const ControlLayout& layout, const Vec& w,
                                const PfOptions& opts = {});

struct CostParams {
  double tau_hours = 1.0;
  double price_active = 0;    // currency per MWh drawn at the primary
  double price_reactive = 0;  // currency per Mvarh at the primary, signed
};

double evaluate_cost(const Network& net, const ControlLayout& layout,
                     const OperatingPoint& op, const CostParams& cost);

struct Violation {
  std::string what;
  double amount = 0;  // positive = infeasible by this much
};

struct FeasReport {
  bool feasible = true;
  double worst = 0;
  std::vector<Violation> items;
};

FeasReport check_feasibility(const Network& net, const ControlLayout& layout,
                             const OperatingPoint& op, double tol = 1e-6);

// Derivative blocks of all injected currents at a voltage iterate:
// a = d(I_stacked)/d(V_stacked), b = d(I_stacked)/d(w). Voltage-controlled
// devices contribute at their anchor reactive output like any other source;
// their special treatment lives in the sensitivity assembly.
struct DeviceBlocks {
  Mat a;  // 2N x 2N
  Mat b;  // 2N x n_w
};

DeviceBlocks stamp_device_blocks(const Network& net, const LoadView& loads,
                                 const ControlLayout& layout, const Vec& w,
                                 const CVec& v, const Vec& q_g_vc,
                                 bool include_vc_devices = true);

// Stacked injected current vector at a voltage iterate (device, load,
// capacitor, and upstream-source terms; the head-admittance term lives in
// bus_admittance).
CVec injected_currents(const Network& net, const LoadView& loads,
                       const ControlLayout& layout, const Vec& w,
                       const CVec& v, const Vec& q_g_vc);

}  // namespace dsopt
