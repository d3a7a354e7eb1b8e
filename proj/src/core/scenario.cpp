#include "scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "node_problem.hpp"
#include "textfile.hpp"

namespace dsopt {
namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

LoadView scaled(const LoadView& base, double mult) {
  LoadView v = base;
  v.p0 *= mult;
  v.q0 *= mult;
  return v;
}

// What the optimizer believes about demand this hour. The feeder itself is
// always evaluated with `truth`.
LoadView believed_view(const Network& net, const ControlLayout& layout,
                       const LoadView& truth, const Scenario& sc,
                       const Vec& w_now) {
  switch (sc.mode) {
    case ScheduleMode::ConstantPowerLoads: {
      // Voltage-insensitive model pinned to today's consumption: nominal
      // power equal to the actual draw at the current operating voltages.
      const OperatingPoint op = solve_power_flow(net, truth, layout, w_now);
      LoadView v = truth;
      v.zp_p = 0;
      v.zp_q = 0;
      for (int b = 0; b < v.p0.size(); ++b) {
        const double vm = std::abs(op.v[b]);
        v.p0[b] = truth.active(b, vm);
        v.q0[b] = truth.reactive(b, vm);
      }
      return v;
    }
    case ScheduleMode::StaleLoadModel: {
      LoadView v = truth;
      if (sc.stale_zp_p >= 0) v.zp_p = sc.stale_zp_p;
      if (sc.stale_zp_q >= 0) v.zp_q = sc.stale_zp_q;
      return v;
    }
    default:
      return truth;
  }
}

struct HourSolve {
  bool ok = false;
  bool budget = false;
  Vec w;
  double cost_believed = 0;
  double lower_bound = 0;
  int nodes = 0, tra_calls = 0, lp_solves = 0, pf_solves = 0;
  std::vector<NodeRecord> records;
};

MinlpOptions minlp_options(const Scenario& sc) {
  MinlpOptions o;
  o.use_gate = sc.use_gate;
  o.workers = sc.workers;
  o.node_budget = sc.node_budget;
  o.record_nodes = sc.record_nodes;
  return o;
}

HourSolve solve_tree(const Network& net, const LoadView& believed,
                     const ControlLayout& layout, const CostParams& cost,
                     const Vec& w_start, const MinlpOptions& opts) {
  HourSolve hs;
  MinlpResult res = solve_minlp(net, believed, layout, cost, w_start, opts);
  hs.ok = res.has_incumbent;
  hs.budget = res.budget_exceeded;
  if (hs.ok) {
    hs.w = res.w;
    hs.cost_believed = res.objective;
  }
  hs.lower_bound = res.lower_bound;
  hs.nodes = res.nodes_opened;
  hs.tra_calls = res.tra_calls;
  hs.lp_solves = res.lp_solves;
  hs.pf_solves = res.pf_solves;
  hs.records = std::move(res.records);
  return hs;
}

// Single-shot schedule: take the screening program's vertex over the whole
// box, round the discrete slots, and polish the continuous ones once.
HourSolve solve_lp_only(const Network& net, const LoadView& believed,
                        const ControlLayout& layout, const CostParams& cost,
                        const Vec& w_start) {
  HourSolve hs;
  const Vec anchor = layout.clamp(w_start);
  const OperatingPoint op0 = solve_power_flow(net, believed, layout, anchor);
  ++hs.pf_solves;
  const PerturbedModel model = assemble_perturbed(net, believed, layout, op0);
  std::vector<ConstraintRow> rows = linearize_rows(net, layout, model);
  const ObjectiveModel obj = objective_model(net, layout, model, cost);

  GateLp gate =
      build_gate_lp(obj, rows, anchor, layout.lower(), layout.upper());
  const LpSolution lp = solve_lp(gate.lp);
  ++hs.lp_solves;
  Vec w_target = anchor;
  if (lp.status == LpStatus::Optimal) w_target = anchor + lp.x;

  Vec lo = layout.lower(), hi = layout.upper();
  for (int i = 0; i < layout.size(); ++i)
    if (layout.entries[i].is_integer)
      lo[i] = hi[i] = std::llround(w_target[i]);

  const std::vector<ConstraintRow> templates = row_templates(net, layout);
  const std::vector<int> keep = filter_rows(rows, anchor, lo, hi);
  std::vector<ConstraintRow> node_rows;
  for (int j : keep) {
    ConstraintRow r = templates[j];
    node_rows.push_back(r);
  }
  NodeNlp nlp(net, believed, layout, cost, node_rows, lo, hi);
  NodeNlpResult res;
  try {
    res = nlp.solve(w_target, {});
  } catch (const NumericError&) {
    hs.pf_solves += nlp.pf_solves();
    return hs;
  }
  ++hs.tra_calls;
  hs.pf_solves += nlp.pf_solves();
  if (res.status == tra::NlpStatus::Infeasible) return hs;
  const double full_viol =
      max_row_violation(net, layout, templates, res.op);
  const FeasReport rep = check_feasibility(net, layout, res.op);
  if (full_viol > 1e-6 || !rep.feasible) return hs;

  hs.ok = true;
  hs.w = res.w;
  hs.cost_believed = res.cost;
  hs.lower_bound = lp.status == LpStatus::Optimal
                       ? gate.obj_offset + lp.objective
                       : res.cost;
  return hs;
}

}  // namespace

ScheduleMode parse_mode(const std::string& text) {
  if (text == "full") return ScheduleMode::Full;
  if (text == "lp_only") return ScheduleMode::LpOnly;
  if (text == "fixed_start") return ScheduleMode::FixedStart;
  if (text == "constant_power_loads") return ScheduleMode::ConstantPowerLoads;
  if (text == "stale_load_model") return ScheduleMode::StaleLoadModel;
  throw ValidationError("unknown schedule mode '" + text + "'");
}

std::string mode_name(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::Full: return "full";
    case ScheduleMode::LpOnly: return "lp_only";
    case ScheduleMode::FixedStart: return "fixed_start";
    case ScheduleMode::ConstantPowerLoads: return "constant_power_loads";
    case ScheduleMode::StaleLoadModel: return "stale_load_model";
  }
  return "?";
}

Scenario load_scenario(const std::string& path) {
  const TextFile file = parse_text_file(path);
  const TextSection& head = file.require("scenario");

  Scenario sc;
  sc.name = head.get_string("name", "scenario");
  sc.mode = parse_mode(head.get_string("mode", "full"));
  const std::string initial = head.get_string("initial", "optimal");
  if (initial != "optimal" && initial != "zero")
    throw ValidationError("initial must be 'optimal' or 'zero'");
  sc.start_optimal = initial == "optimal";
  const std::string gate = head.get_string("gate", "on");
  if (gate != "on" && gate != "off")
    throw ValidationError("gate must be 'on' or 'off'");
  sc.use_gate = gate == "on";
  sc.workers = head.get_int("workers", 1);
  sc.node_budget = head.get_int("node_budget", 5000);
  sc.record_nodes = head.get_int("record_nodes", 0) != 0;

  const std::string rel = head.get_string("network");
  namespace fs = std::filesystem;
  fs::path np(rel);
  if (np.is_relative()) np = fs::path(path).parent_path() / np;
  sc.network_path = np.string();

  const TextSection& hours = file.require("hours");
  for (const TextRecord& rec : hours.records) {
    if (rec.fields.size() != 4)
      throw ValidationError("hour records need: hour mult price_a price_r (@" +
                            path + ":" + std::to_string(rec.line) + ")");
    HourSpec h;
    h.hour = static_cast<int>(parse_int_field(rec, 0, "hour"));
    h.load_mult = parse_double_field(rec, 1, "load multiplier");
    h.price_active = parse_double_field(rec, 2, "active price");
    h.price_reactive = parse_double_field(rec, 3, "reactive price");
    if (h.load_mult <= 0) throw ValidationError("load multiplier must be > 0");
    sc.hours.push_back(h);
  }
  if (sc.hours.empty()) throw ValidationError("scenario has no hours");

  if (sc.mode == ScheduleMode::StaleLoadModel) {
    const TextSection& stale = file.require("stale_model");
    sc.stale_zp_p = stale.get_double("p_voltage_share");
    sc.stale_zp_q = stale.get_double("q_voltage_share");
    for (double s : {sc.stale_zp_p, sc.stale_zp_q})
      if (s < 0 || s > 1)
        throw ValidationError("stale shares must lie in [0, 1]");
  }
  return sc;
}

Vec neutral_controls(const ControlLayout& layout) {
  Vec w = Vec::Zero(layout.size());
  for (int i = 0; i < layout.size(); ++i)
    if (layout.entries[i].kind == ControlEntry::Kind::Vset) w[i] = 1.0;
  return layout.clamp(w);
}

ScenarioResult run_scenario(const Network& net, const Scenario& sc) {
  const ControlLayout layout = ControlLayout::build(net);
  const LoadView base = LoadView::from(net);
  const std::vector<ConstraintRow> templates = row_templates(net, layout);

  Vec w = neutral_controls(layout);
  if (sc.start_optimal) {
    const HourSpec& h0 = sc.hours.front();
    const LoadView truth = scaled(base, h0.load_mult);
    const LoadView believed = believed_view(net, layout, truth, sc, w);
    CostParams cost{1.0, h0.price_active, h0.price_reactive};
    MinlpOptions opts = minlp_options(sc);
    opts.record_nodes = false;
    const HourSolve pre = solve_tree(net, believed, layout, cost, w, opts);
    if (pre.ok) w = pre.w;
  }

  ScenarioResult out;
  for (size_t hi = 0; hi < sc.hours.size(); ++hi) {
    const HourSpec& spec = sc.hours[hi];
    const LoadView truth = scaled(base, spec.load_mult);
    const LoadView believed = believed_view(net, layout, truth, sc, w);
    const CostParams cost{1.0, spec.price_active, spec.price_reactive};

    const auto t0 = std::chrono::steady_clock::now();
    HourSolve hs;
    switch (sc.mode) {
      case ScheduleMode::LpOnly:
        hs = solve_lp_only(net, believed, layout, cost, w);
        break;
      case ScheduleMode::FixedStart: {
        MinlpOptions opts = minlp_options(sc);
        opts.root_lo = layout.lower();
        opts.root_hi = layout.upper();
        for (int i = 0; i < layout.size(); ++i)
          if (layout.entries[i].is_integer)
            opts.root_lo[i] = opts.root_hi[i] = std::llround(w[i]);
        hs = solve_tree(net, believed, layout, cost, w, opts);
        break;
      }
      default:
        hs = solve_tree(net, believed, layout, cost, w, minlp_options(sc));
        break;
    }
    const auto t1 = std::chrono::steady_clock::now();

    HourResult hr;
    hr.hour = spec.hour;
    hr.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    hr.nodes = hs.nodes;
    hr.tra_calls = hs.tra_calls;
    hr.lp_solves = hs.lp_solves;
    hr.pf_solves = hs.pf_solves;
    hr.lower_bound = hs.lower_bound;
    hr.records = std::move(hs.records);

    if (hs.ok) {
      hr.status = hs.budget ? "budget" : "optimal";
      hr.w = hs.w;
      hr.cost_believed = hs.cost_believed;
      if (hs.budget) out.any_budget_exceeded = true;
    } else {
      // Hold the previous controls; the hour is reported, not fatal.
      hr.status = "infeasible_held";
      hr.w = w;
      out.any_infeasible = true;
    }

    const OperatingPoint op = solve_power_flow(net, truth, layout, hr.w);
    hr.cost_true = evaluate_cost(net, layout, op, cost);
    if (!hs.ok) hr.cost_believed = hr.cost_true;
    const FeasReport rep = check_feasibility(net, layout, op);
    hr.feas_true = std::max(
        rep.worst, max_row_violation(net, layout, templates, op));
    hr.p_up = op.p_upstream;
    hr.q_up = op.q_upstream;
    hr.loss = op.total_loss();
    hr.v_mag.resize(net.buses.size());
    for (size_t b = 0; b < net.buses.size(); ++b)
      hr.v_mag[b] = std::abs(op.v[b]);

    w = hr.w;
    out.hours.push_back(std::move(hr));
  }
  return out;
}

void write_scenario_outputs(const Network& net, const ControlLayout& layout,
                            const Scenario& sc, const ScenarioResult& res,
                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  {
    std::ofstream f(dir / "results.csv");
    f << "hour,status,cost_true,cost_believed,feas_true,p_upstream,"
         "q_upstream,loss,lower_bound,nodes,tra_calls,lp_solves\n";
    for (const auto& h : res.hours)
      f << h.hour << ',' << h.status << ',' << fmt(h.cost_true) << ','
        << fmt(h.cost_believed) << ',' << fmt(h.feas_true) << ','
        << fmt(h.p_up) << ',' << fmt(h.q_up) << ',' << fmt(h.loss) << ','
        << fmt(h.lower_bound) << ',' << h.nodes << ',' << h.tra_calls << ','
        << h.lp_solves << '\n';
  }
  {
    std::ofstream f(dir / "timings.csv");
    f << "hour,wall_ms\n";
    for (const auto& h : res.hours)
      f << h.hour << ',' << fmt(h.wall_ms) << '\n';
  }
  {
    std::ofstream f(dir / "series_cost.csv");
    f << "hour,cost_true,cost_believed\n";
    for (const auto& h : res.hours)
      f << h.hour << ',' << fmt(h.cost_true) << ',' << fmt(h.cost_believed)
        << '\n';
  }
  {
    std::ofstream f(dir / "series_tap.csv");
    f << "hour";
    for (const auto& e : layout.entries)
      if (e.is_integer) f << ',' << e.name;
    f << '\n';
    for (const auto& h : res.hours) {
      f << h.hour;
      for (int i = 0; i < layout.size(); ++i)
        if (layout.entries[i].is_integer) f << ',' << std::llround(h.w[i]);
      f << '\n';
    }
  }
  {
    std::ofstream f(dir / "series_voltage.csv");
    f << "hour";
    for (const auto& b : net.buses) f << ',' << b.name;
    f << '\n';
    for (const auto& h : res.hours) {
      f << h.hour;
      for (double v : h.v_mag) f << ',' << fmt(v);
      f << '\n';
    }
  }
  if (sc.record_nodes) {
    std::ofstream f(dir / "nodes.jsonl");
    for (const auto& h : res.hours)
      for (const auto& r : h.records) {
        nlohmann::json j;
        j["hour"] = h.hour;
        j["id"] = r.id;
        j["parent"] = r.parent;
        j["depth"] = r.depth;
        j["action"] = r.action;
        if (std::isfinite(r.parent_bound)) j["parent_bound"] = r.parent_bound;
        if (std::isfinite(r.lp_bound)) j["lp_bound"] = r.lp_bound;
        if (std::isfinite(r.nlp_bound)) j["nlp_bound"] = r.nlp_bound;
        if (r.branch_var >= 0) {
          j["branch_var"] = layout.entries[r.branch_var].name;
          j["branch_value"] = r.branch_value;
        }
        j["nlp_iterations"] = r.nlp_iterations;
        if (std::isfinite(r.incumbent_after))
          j["incumbent"] = r.incumbent_after;
        f << j.dump() << '\n';
      }
  }
}

}  // namespace dsopt
