#pragma once

#include <string>
#include <vector>

#include "bnc.hpp"
#include "netfile.hpp"

namespace dsopt {

// The five ways an hour can be scheduled. They differ in what the optimizer
// is allowed to do and in what demand model it believes; the feeder itself
// always follows the network file.
enum class ScheduleMode {
  Full,               // branch-and-cut over all controls
  LpOnly,             // round the screening program's vertex, polish, apply
  FixedStart,         // discrete devices frozen at their hour-start values
  ConstantPowerLoads, // optimizer believes demand ignores voltage
  StaleLoadModel,     // optimizer believes outdated voltage-dependence shares
};

ScheduleMode parse_mode(const std::string& text);
std::string mode_name(ScheduleMode mode);

struct HourSpec {
  int hour = 0;
  double load_mult = 1.0;
  double price_active = 0;
  double price_reactive = 0;
};

struct Scenario {
  std::string name;
  std::string network_path;  // resolved against the scenario file location
  ScheduleMode mode = ScheduleMode::Full;
  bool start_optimal = true;  // hour-1 controls: pre-solved vs neutral
  bool use_gate = true;
  int workers = 1;
  int node_budget = 5000;
  bool record_nodes = false;
  std::vector<HourSpec> hours;
  double stale_zp_p = -1, stale_zp_q = -1;  // believed shares, when staled
};

Scenario load_scenario(const std::string& path);

struct HourResult {
  int hour = 0;
  std::string status;  // optimal | budget | infeasible_held
  Vec w;               // controls applied to the feeder this hour
  double cost_true = 0;      // exact cost on the real feeder
  double cost_believed = 0;  // what the optimizer's demand model predicted
  double feas_true = 0;      // worst operating-limit violation on the feeder
  double p_up = 0, q_up = 0, loss = 0;
  double lower_bound = 0;
  int nodes = 0, tra_calls = 0, lp_solves = 0, pf_solves = 0;
  double wall_ms = 0;  // excluded from the deterministic outputs
  std::vector<double> v_mag;  // per bus, real feeder
  std::vector<NodeRecord> records;
};

struct ScenarioResult {
  std::vector<HourResult> hours;
  bool any_budget_exceeded = false;
  bool any_infeasible = false;
};

// Neutral control vector: taps and capacitor steps at zero (clamped into
// range), device outputs at zero, voltage set-points at 1 pu.
Vec neutral_controls(const ControlLayout& layout);

ScenarioResult run_scenario(const Network& net, const Scenario& sc);

// Writers. Everything except timings.csv is byte-deterministic for a given
// build; timings.csv carries the wall-clock numbers.
void write_scenario_outputs(const Network& net, const ControlLayout& layout,
                            const Scenario& sc, const ScenarioResult& res,
                            const std::string& out_dir);

}  // namespace dsopt
