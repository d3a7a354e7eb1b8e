#include "dsopt/dsopt.h"

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "core/bnc.hpp"
#include "core/errors.hpp"
#include "core/estimation.hpp"
#include "core/netfile.hpp"
#include "core/scenario.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& what) { g_last_error = what; }

// Exceptions never cross the C boundary; they become status codes here.
template <typename Fn>
dsopt_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const dsopt::ValidationError& e) {
    set_error(e.what());
    return DSOPT_PARSE_ERROR;
  } catch (const dsopt::ConditioningError& e) {
    set_error(e.what());
    return DSOPT_CONDITIONING_ERROR;
  } catch (const dsopt::NumericError& e) {
    set_error(e.what());
    return DSOPT_NUMERIC_ERROR;
  } catch (const std::exception& e) {
    set_error(e.what());
    return DSOPT_IO_ERROR;
  } catch (...) {
    set_error("unknown failure");
    return DSOPT_IO_ERROR;
  }
}

}  // namespace

struct dsopt_network {
  dsopt::Network net;
  dsopt::ControlLayout layout;
};

struct dsopt_result {
  std::vector<dsopt::HourResult> hours;
};

extern "C" {

const char* dsopt_version(void) { return "0.1.0"; }

const char* dsopt_last_error(void) { return g_last_error.c_str(); }

dsopt_status dsopt_network_load(const char* path, dsopt_network** out) {
  if (!path || !out) {
    set_error("null argument");
    return DSOPT_INVALID_ARGUMENT;
  }
  *out = nullptr;
  return guarded([&] {
    auto* handle = new dsopt_network;
    try {
      handle->net = dsopt::load_network(path);
      handle->layout = dsopt::ControlLayout::build(handle->net);
    } catch (...) {
      delete handle;
      throw;
    }
    *out = handle;
    return DSOPT_OK;
  });
}

dsopt_status dsopt_network_parse(const char* text, dsopt_network** out) {
  if (!text || !out) {
    set_error("null argument");
    return DSOPT_INVALID_ARGUMENT;
  }
  *out = nullptr;
  return guarded([&] {
    auto* handle = new dsopt_network;
    try {
      handle->net =
          dsopt::network_from_text(dsopt::parse_text(text, "<memory>"));
      handle->layout = dsopt::ControlLayout::build(handle->net);
    } catch (...) {
      delete handle;
      throw;
    }
    *out = handle;
    return DSOPT_OK;
  });
}

void dsopt_network_free(dsopt_network* net) { delete net; }

int dsopt_network_bus_count(const dsopt_network* net) {
  return net ? static_cast<int>(net->net.buses.size()) : 0;
}

int dsopt_network_control_count(const dsopt_network* net) {
  return net ? net->layout.size() : 0;
}

dsopt_status dsopt_control_name(const dsopt_network* net, int index,
                                const char** name) {
  if (!net || !name || index < 0 || index >= net->layout.size()) {
    set_error("control index out of range");
    return DSOPT_INVALID_ARGUMENT;
  }
  *name = net->layout.entries[index].name.c_str();
  return DSOPT_OK;
}

void dsopt_options_init(dsopt_options* opts) {
  if (!opts) return;
  opts->gate = 1;
  opts->workers = 1;
  opts->node_budget = 5000;
  opts->feas_tol = 1e-6;
  opts->record_nodes = 0;
}

dsopt_status dsopt_solve_hour(const dsopt_network* net, double load_mult,
                              double price_active, double price_reactive,
                              const double* w_start,
                              const dsopt_options* opts, dsopt_result** out) {
  if (!net || !out || load_mult <= 0) {
    set_error(load_mult <= 0 ? "load multiplier must be positive"
                             : "null argument");
    return DSOPT_INVALID_ARGUMENT;
  }
  *out = nullptr;
  return guarded([&]() -> dsopt_status {
    dsopt_options defaults;
    dsopt_options_init(&defaults);
    const dsopt_options& o = opts ? *opts : defaults;

    dsopt::LoadView loads = dsopt::LoadView::from(net->net);
    loads.p0 *= load_mult;
    loads.q0 *= load_mult;
    dsopt::CostParams cost{1.0, price_active, price_reactive};

    dsopt::Vec w0;
    if (w_start) {
      w0.resize(net->layout.size());
      for (int i = 0; i < net->layout.size(); ++i) w0[i] = w_start[i];
    } else {
      w0 = dsopt::neutral_controls(net->layout);
    }

    dsopt::MinlpOptions mo;
    mo.use_gate = o.gate != 0;
    mo.workers = o.workers > 0 ? o.workers : 1;
    mo.node_budget = o.node_budget > 0 ? o.node_budget : 5000;
    mo.feas_tol = o.feas_tol > 0 ? o.feas_tol : 1e-6;
    mo.record_nodes = o.record_nodes != 0;

    dsopt::MinlpResult res =
        dsopt::solve_minlp(net->net, loads, net->layout, cost, w0, mo);
    if (!res.has_incumbent) {
      set_error("no feasible schedule exists for this hour");
      return res.budget_exceeded ? DSOPT_BUDGET_EXCEEDED : DSOPT_INFEASIBLE;
    }

    dsopt::HourResult hr;
    hr.hour = 1;
    hr.status = res.budget_exceeded ? "budget" : "optimal";
    hr.w = res.w;
    hr.cost_true = res.objective;
    hr.cost_believed = res.objective;
    hr.lower_bound = res.lower_bound;
    hr.nodes = res.nodes_opened;
    hr.tra_calls = res.tra_calls;
    hr.lp_solves = res.lp_solves;
    hr.pf_solves = res.pf_solves;
    hr.p_up = res.op.p_upstream;
    hr.q_up = res.op.q_upstream;
    hr.loss = res.op.total_loss();
    const dsopt::FeasReport rep =
        dsopt::check_feasibility(net->net, net->layout, res.op);
    hr.feas_true = rep.worst;
    hr.v_mag.resize(net->net.buses.size());
    for (size_t b = 0; b < net->net.buses.size(); ++b)
      hr.v_mag[b] = std::abs(res.op.v[b]);
    hr.records = std::move(res.records);

    auto* handle = new dsopt_result;
    handle->hours.push_back(std::move(hr));
    *out = handle;
    return res.budget_exceeded ? DSOPT_BUDGET_EXCEEDED : DSOPT_OK;
  });
}

dsopt_status dsopt_run_scenario(const char* scenario_path, const char* out_dir,
                                dsopt_result** out) {
  if (!scenario_path || !out_dir || !out) {
    set_error("null argument");
    return DSOPT_INVALID_ARGUMENT;
  }
  *out = nullptr;
  return guarded([&]() -> dsopt_status {
    const dsopt::Scenario sc = dsopt::load_scenario(scenario_path);
    const dsopt::Network net = dsopt::load_network(sc.network_path);
    const dsopt::ControlLayout layout = dsopt::ControlLayout::build(net);
    dsopt::ScenarioResult res = dsopt::run_scenario(net, sc);
    dsopt::write_scenario_outputs(net, layout, sc, res, out_dir);

    auto* handle = new dsopt_result;
    handle->hours = std::move(res.hours);
    *out = handle;
    if (res.any_budget_exceeded) {
      set_error("at least one hour stopped on the node budget");
      return DSOPT_BUDGET_EXCEEDED;
    }
    return DSOPT_OK;
  });
}

void dsopt_result_free(dsopt_result* res) { delete res; }

int dsopt_result_hours(const dsopt_result* res) {
  return res ? static_cast<int>(res->hours.size()) : 0;
}

dsopt_status dsopt_result_cost(const dsopt_result* res, int hour_index,
                               double* cost) {
  if (!res || !cost || hour_index < 0 ||
      hour_index >= static_cast<int>(res->hours.size())) {
    set_error("hour index out of range");
    return DSOPT_INVALID_ARGUMENT;
  }
  *cost = res->hours[hour_index].cost_true;
  return DSOPT_OK;
}

dsopt_status dsopt_result_stat(const dsopt_result* res, int hour_index,
                               const char* key, double* value) {
  if (!res || !key || !value || hour_index < 0 ||
      hour_index >= static_cast<int>(res->hours.size())) {
    set_error("bad result query");
    return DSOPT_INVALID_ARGUMENT;
  }
  const dsopt::HourResult& h = res->hours[hour_index];
  const std::string k(key);
  if (k == "cost_believed")
    *value = h.cost_believed;
  else if (k == "lower_bound")
    *value = h.lower_bound;
  else if (k == "nodes")
    *value = h.nodes;
  else if (k == "tra_calls")
    *value = h.tra_calls;
  else if (k == "lp_solves")
    *value = h.lp_solves;
  else if (k == "pf_solves")
    *value = h.pf_solves;
  else if (k == "p_upstream")
    *value = h.p_up;
  else if (k == "q_upstream")
    *value = h.q_up;
  else if (k == "loss")
    *value = h.loss;
  else if (k == "feas_true")
    *value = h.feas_true;
  else if (k == "held")
    *value = h.status == "infeasible_held" ? 1 : 0;
  else {
    set_error("unknown statistic '" + k + "'");
    return DSOPT_INVALID_ARGUMENT;
  }
  return DSOPT_OK;
}

dsopt_status dsopt_result_control(const dsopt_result* res, int hour_index,
                                  int control_index, double* value) {
  if (!res || !value || hour_index < 0 ||
      hour_index >= static_cast<int>(res->hours.size())) {
    set_error("bad result query");
    return DSOPT_INVALID_ARGUMENT;
  }
  const dsopt::HourResult& h = res->hours[hour_index];
  if (control_index < 0 || control_index >= h.w.size()) {
    set_error("control index out of range");
    return DSOPT_INVALID_ARGUMENT;
  }
  *value = h.w[control_index];
  return DSOPT_OK;
}

dsopt_status dsopt_estimate_thevenin(const double* v_mag, const double* i_mag,
                                     const double* phi, double* v_th,
                                     double* z_mag, double* z_arg) {
  if (!v_mag || !i_mag || !phi || !v_th || !z_mag || !z_arg) {
    set_error("null argument");
    return DSOPT_INVALID_ARGUMENT;
  }
  return guarded([&] {
    std::array<dsopt::PortSnapshot, 3> snaps;
    for (int k = 0; k < 3; ++k) snaps[k] = {v_mag[k], i_mag[k], phi[k]};
    const dsopt::TheveninEstimate est = dsopt::estimate_thevenin(snaps);
    *v_th = est.v_th;
    *z_mag = est.z_mag;
    *z_arg = est.z_arg;
    return DSOPT_OK;
  });
}

}  // extern "C"
